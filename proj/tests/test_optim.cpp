#include <doctest.h>

#include <cstdio>
#include <filesystem>

#include "ctx/checkpoint.hpp"
#include "ctx/errors.hpp"
#include "ctx/optim.hpp"

using namespace ctx;

TEST_CASE("adamw: zero grad and zero decay leave parameters unchanged") {
    std::vector<Tensor> params{Tensor::from_data({3}, {1, -2, 3}, true)};
    AdamWState st;
    st.weight_decay = 0.0;
    adamw_step(params, st, 0.1);
    CHECK(params[0].data()[0] == 1.0f);
    CHECK(params[0].data()[1] == -2.0f);
    CHECK(params[0].data()[2] == 3.0f);
    CHECK(st.step_count == 1);
    adamw_step(params, st, 0.1);
    CHECK(st.step_count == 2);
}

TEST_CASE("adamw: bias-corrected first step moves a unit-gradient scalar by ~lr") {
    std::vector<Tensor> params{Tensor::from_data({1}, {1.0f}, true)};
    {
        auto loss = sum(params[0]);  // grad 1
        loss.backward();
    }
    AdamWState st;
    st.weight_decay = 0.0;
    adamw_step(params, st, 0.1);
    CHECK(params[0].data()[0] == doctest::Approx(0.9).epsilon(1e-6));
}

TEST_CASE("adamw: decoupled decay applies before the update") {
    std::vector<Tensor> params{Tensor::from_data({1}, {1.0f}, true)};
    AdamWState st;
    st.weight_decay = 0.1;
    adamw_step(params, st, 0.1);
    CHECK(params[0].data()[0] == doctest::Approx(0.99));
}

TEST_CASE("lr_at: warmup, endpoints, midpoint, range") {
    CosineSchedule s{1e-4, 0.0, 10, 110};
    CHECK(lr_at(s, 10) == doctest::Approx(1e-4));
    CHECK(lr_at(s, 110) == doctest::Approx(0.0));
    CHECK(lr_at(s, 60) == doctest::Approx(0.5e-4));
    CHECK(lr_at(s, 5) == doctest::Approx(0.5e-4));  // linear warmup
    CHECK(lr_at(s, 0) == doctest::Approx(0.0));
    for (std::int64_t t = 0; t <= 110; ++t) {
        const double lr = lr_at(s, t);
        CHECK(lr >= s.min_lr - 1e-15);
        CHECK(lr <= s.base_lr + 1e-15);
    }
    CHECK_THROWS_AS(lr_at(s, -1), ContractError);
    CHECK_THROWS_AS(lr_at(s, 111), ContractError);

    CosineSchedule with_floor{1e-3, 1e-5, 0, 100};
    CHECK(lr_at(with_floor, 0) == doctest::Approx(1e-3));
    CHECK(lr_at(with_floor, 100) == doctest::Approx(1e-5));
    CHECK(lr_at(with_floor, 50) == doctest::Approx((1e-3 + 1e-5) / 2));
}

TEST_CASE("checkpoint round-trip is bit-exact and self-describing") {
    Rng rng(3);
    std::vector<NamedTensor> tensors;
    tensors.push_back({"a.w", Tensor::randn({4, 3}, rng)});
    tensors.push_back({"b", Tensor::randn({7}, rng)});
    const auto path = (std::filesystem::temp_directory_path() / "ctx_test_ckpt.ctckpt").string();
    save_checkpoint(path, tensors, "{\"note\":42}");
    const auto loaded = load_checkpoint(path);
    REQUIRE(loaded.tensors.size() == 2);
    CHECK(loaded.tensors[0].name == "a.w");
    CHECK(loaded.tensors[0].tensor.shape() == Shape{4, 3});
    for (std::int64_t i = 0; i < 12; ++i)
        CHECK(loaded.tensors[0].tensor.data()[i] == tensors[0].tensor.data()[i]);
    CHECK(loaded.tensors[1].name == "b");
    CHECK(loaded.config_json.find("42") != std::string::npos);
    std::filesystem::remove(path);
}
