#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include <nlohmann/json.hpp>

#include "ctx/cliconfig.hpp"
#include "ctx/errors.hpp"
#include "ctx/flops.hpp"
#include "ctx/infer.hpp"
#include "ctx/manifest.hpp"
#include "ctx/metrics.hpp"
#include "ctx/model.hpp"
#include "ctx/synthetic.hpp"
#include "ctx/train.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

ctx::SceneSpec scene_spec_from(const ctx::CliConfig& cfg) {
    ctx::SceneSpec s;
    s.panel_h = s.panel_w = cfg.integer("data.panel");
    s.glyph_count_min = static_cast<int>(cfg.integer("data.glyph_min"));
    s.glyph_count_max = static_cast<int>(cfg.integer("data.glyph_max"));
    s.glyph_scale_min = cfg.num("data.scale_min");
    s.glyph_scale_max = cfg.num("data.scale_max");
    s.rng_seed = static_cast<std::uint64_t>(cfg.integer("seed"));
    return s;
}

ctx::ModelConfig model_config_from(const ctx::CliConfig& cfg) {
    ctx::ModelConfig m;
    m.panel_h = m.panel_w = cfg.integer("model.panel");
    m.patch = cfg.integer("model.patch");
    m.dim = cfg.integer("model.dim");
    m.heads = static_cast<int>(cfg.integer("model.heads"));
    m.pre_depth = static_cast<int>(cfg.integer("model.pre_depth"));
    m.post_depth = static_cast<int>(cfg.integer("model.post_depth"));
    m.dec_depth = static_cast<int>(cfg.integer("model.dec_depth"));
    m.mask_token = cfg.str("model.mask_token") == "per_task" ? ctx::MaskTokenKind::per_task
                                                             : ctx::MaskTokenKind::shared;
    m.fusion = ctx::fusion_mode_from_name(cfg.str("model.fusion"));
    m.validate();
    return m;
}

ctx::TrainConfig train_config_from(const ctx::CliConfig& cfg) {
    ctx::TrainConfig t;
    t.epochs = cfg.integer("train.epochs");
    t.batch_size = cfg.integer("train.batch_size");
    t.accum_steps = cfg.integer("train.accum_steps");
    t.mask_ratio = cfg.num("train.mask_ratio");
    t.self_prompt_p = cfg.num("train.self_prompt_p");
    t.weights = {cfg.num("train.w_rem"), cfg.num("train.w_seg"), cfg.num("train.w_pix")};
    t.base_lr = cfg.num("train.base_lr");
    t.min_lr = cfg.num("train.min_lr");
    t.weight_decay = cfg.num("train.weight_decay");
    t.warmup_frac = cfg.num("train.warmup_frac");
    t.seed = static_cast<std::uint64_t>(cfg.integer("seed"));
    t.ckpt_every_epochs = cfg.integer("train.ckpt_every");
    t.mode = ctx::grid_mode_from_name(cfg.str("train.mode"));
    t.validate();
    return t;
}

int cmd_gen_data(const ctx::CliConfig& cfg) {
    const auto triples = ctx::generate_dataset(scene_spec_from(cfg), cfg.integer("data.count"));
    const auto manifest = ctx::write_dataset(cfg.str("out"), triples, cfg.num("data.val_fraction"));
    std::printf("wrote %zu samples, manifest %s\n", triples.size(), manifest.c_str());
    return 0;
}

int cmd_gen_prompttext(const ctx::CliConfig& cfg) {
    ctx::PromptTextSpec spec;
    spec.sample_count = cfg.integer("prompttext.count");
    spec.panel_h = spec.panel_w = cfg.integer("prompttext.panel");
    spec.rng_seed = static_cast<std::uint64_t>(cfg.integer("seed"));
    const auto samples = ctx::generate_prompttext(spec);
    const auto manifest = ctx::write_prompttext(cfg.str("out"), samples);
    std::printf("wrote %zu samples x %zu levels, manifest %s\n", samples.size(),
                spec.erase_probabilities.size(), manifest.c_str());
    return 0;
}

int cmd_train(const ctx::CliConfig& cfg) {
    const auto manifest = cfg.str("train.manifest");
    if (manifest.empty()) throw ctx::ContractError("train requires train.manifest");
    const auto train_split = ctx::load_split(manifest, "train");
    const auto val_split = ctx::load_split(manifest, "val");
    if (train_split.empty()) throw ctx::ContractError("manifest has no train split");

    ctx::ModelConfig mc = model_config_from(cfg);
    mc.panel_h = train_split[0].input.h;
    mc.panel_w = train_split[0].input.w;
    ctx::ContextModel model(mc, static_cast<std::uint64_t>(cfg.integer("seed")));

    ctx::TrainConfig tc = train_config_from(cfg);
    tc.out_dir = cfg.str("out");
    const auto chunk = tc.batch_size * tc.accum_steps;
    const auto steps_per_epoch =
        (static_cast<std::int64_t>(train_split.size()) + chunk - 1) / chunk;
    ctx::Trainer trainer(model, tc, steps_per_epoch);
    const auto log = trainer.run(train_split, val_split);
    if (!log.epochs.empty())
        std::printf("final val: fgIoU %.2f%%  PSNR %.2f dB\n", log.epochs.back().val_fgiou,
                    log.epochs.back().val_psnr);
    std::printf("checkpoints + trainlog in %s\n", cfg.str("out").c_str());
    return 0;
}

struct PairScores {
    ctx::MetricReport report;
    std::size_t count = 0;
    std::vector<std::vector<double>> pred_embeds, gt_embeds;
};

void accumulate_pair(PairScores& acc, const ctx::Image& pred_rem, const ctx::MaskPlane& pred_seg,
                     const ctx::SampleTriple& gt) {
    acc.report.psnr += ctx::psnr(pred_rem, gt.removal);
    acc.report.mssim += ctx::mssim(pred_rem, gt.removal);
    acc.report.mse += ctx::mse_pct(pred_rem, gt.removal);
    acc.report.age += ctx::age(pred_rem, gt.removal);
    acc.report.peps += ctx::peps(pred_rem, gt.removal);
    acc.report.pceps += ctx::pceps(pred_rem, gt.removal);
    const auto seg = ctx::fgiou_fscore(pred_seg, ctx::MaskPlane::from_image(gt.seg));
    acc.report.fgiou += seg.fgiou;
    acc.report.precision += seg.precision;
    acc.report.recall += seg.recall;
    acc.report.fscore += seg.fscore;
    acc.pred_embeds.push_back(ctx::toy_embedding(pred_rem));
    acc.gt_embeds.push_back(ctx::toy_embedding(gt.removal));
    ++acc.count;
}

ctx::MetricReport finish_scores(PairScores& acc) {
    ctx::MetricReport r = acc.report;
    const double n = static_cast<double>(acc.count);
    r.psnr /= n;
    r.mssim /= n;
    r.mse /= n;
    r.age /= n;
    r.peps /= n;
    r.pceps /= n;
    r.fgiou /= n;
    r.precision /= n;
    r.recall /= n;
    r.fscore /= n;
    if (acc.count >= 2)
        r.frechet = ctx::frechet_distance(ctx::GaussianStats::from_embeddings(acc.pred_embeds),
                                          ctx::GaussianStats::from_embeddings(acc.gt_embeds));
    return r;
}

int cmd_eval(const ctx::CliConfig& cfg) {
    const auto manifest = cfg.str("eval.manifest");
    if (manifest.empty()) throw ctx::ContractError("eval requires eval.manifest");
    const auto records = ctx::read_manifest(manifest);
    if (records.empty()) throw ctx::ContractError("empty manifest");

    PairScores acc;
    const auto pred_dir = cfg.str("eval.pred_dir");
    if (!pred_dir.empty()) {
        for (const auto& rec : records) {
            const auto gt = ctx::load_triple(manifest, rec);
            const auto rem = ctx::read_png((fs::path(pred_dir) / (rec.sample_id + "_removal.png")).string());
            auto seg_img = ctx::read_png((fs::path(pred_dir) / (rec.sample_id + "_seg.png")).string());
            for (auto& v : seg_img.pix) v = v >= 0.5f ? 1.0f : 0.0f;
            accumulate_pair(acc, rem, ctx::MaskPlane::from_image(seg_img), gt);
        }
    } else {
        const auto ckpt = cfg.str("eval.ckpt");
        if (ckpt.empty()) throw ctx::ContractError("eval requires eval.pred_dir or eval.ckpt");
        const auto model = ctx::ContextModel::load(ckpt);
        auto pool = ctx::load_split(manifest, "train");
        const auto eval_split = ctx::load_split(manifest, "val");
        const auto& queries = eval_split.empty() ? pool : eval_split;
        if (pool.empty()) pool = queries;
        ctx::Rng rng = ctx::Rng::substream(static_cast<std::uint64_t>(cfg.integer("seed")), "eval_demo");
        const auto k = std::max<std::int64_t>(1, cfg.integer("infer.demos"));
        for (const auto& q : queries) {
            ctx::InferenceRequest req;
            req.query_input = q.input;
            for (std::int64_t i = 0; i < k; ++i)
                req.demos.push_back(pool[rng.uniform_int(pool.size())]);
            req.seg_threshold = cfg.num("infer.threshold");
            const auto res = cfg.flag("infer.double") ? ctx::infer_double(req, model)
                             : k > 1                  ? ctx::infer_ensemble(req, model)
                                                      : ctx::infer(req, model);
            accumulate_pair(acc, res.removal, res.seg_mask, q);
        }
    }
    const auto report = finish_scores(acc);
    fs::create_directories(cfg.str("out"));
    std::ofstream((fs::path(cfg.str("out")) / "report.json").string()) << report.to_json() << "\n";
    const auto table = ctx::report_table({{cfg.str("eval.name"), report}});
    std::ofstream((fs::path(cfg.str("out")) / "report.txt").string()) << table;
    std::fputs(table.c_str(), stdout);
    return 0;
}

int cmd_infer(const ctx::CliConfig& cfg) {
    const auto ckpt = cfg.str("infer.ckpt");
    const auto data = cfg.str("infer.data");
    if (ckpt.empty() || data.empty()) throw ctx::ContractError("infer requires infer.ckpt and infer.data");
    const auto model = ctx::ContextModel::load(ckpt);
    const auto pool = ctx::load_split(data, "");
    if (pool.empty()) throw ctx::ContractError("empty data manifest");
    std::map<std::string, const ctx::SampleTriple*> by_id;
    for (const auto& t : pool) by_id[t.sample_id] = &t;

    struct Request {
        std::string query;
        std::vector<std::string> demos;
    };
    std::vector<Request> requests;
    const auto req_path = cfg.str("infer.requests");
    if (!req_path.empty()) {
        std::ifstream is(req_path);
        if (!is) throw ctx::IoError("cannot open request manifest: " + req_path);
        std::string line;
        while (std::getline(is, line)) {
            if (line.empty()) continue;
            json j = json::parse(line);
            Request r;
            r.query = j.at("query").get<std::string>();
            if (j.contains("demos")) r.demos = j["demos"].get<std::vector<std::string>>();
            requests.push_back(std::move(r));
        }
    } else {
        for (const auto& t : pool) requests.push_back({t.sample_id, {}});
    }

    fs::create_directories(cfg.str("out"));
    ctx::Rng rng = ctx::Rng::substream(static_cast<std::uint64_t>(cfg.integer("seed")), "infer_demo");
    const auto k = std::max<std::int64_t>(1, cfg.integer("infer.demos"));
    std::ofstream index((fs::path(cfg.str("out")) / "results.jsonl").string());
    for (const auto& r : requests) {
        auto it = by_id.find(r.query);
        if (it == by_id.end()) throw ctx::ContractError("unknown query id: " + r.query);
        ctx::InferenceRequest req;
        req.query_input = it->second->input;
        req.seg_threshold = cfg.num("infer.threshold");
        for (const auto& id : r.demos) {
            auto dit = by_id.find(id);
            if (dit == by_id.end()) throw ctx::ContractError("unknown demo id: " + id);
            req.demos.push_back(*dit->second);
        }
        while (static_cast<std::int64_t>(req.demos.size()) < k) {
            const auto& cand = pool[rng.uniform_int(pool.size())];
            if (cand.sample_id != r.query || pool.size() == 1) req.demos.push_back(cand);
        }
        const auto res = cfg.flag("infer.double") ? ctx::infer_double(req, model)
                         : req.demos.size() > 1   ? ctx::infer_ensemble(req, model)
                                                  : ctx::infer(req, model);
        const auto rem_path = r.query + "_removal.png";
        const auto seg_path = r.query + "_seg.png";
        ctx::write_png((fs::path(cfg.str("out")) / rem_path).string(), res.removal);
        ctx::Image seg_img(res.seg_mask.h, res.seg_mask.w);
        for (std::int64_t y = 0; y < seg_img.h; ++y)
            for (std::int64_t x = 0; x < seg_img.w; ++x) {
                const float v = res.seg_mask.on[static_cast<std::size_t>(y * seg_img.w + x)] ? 1.0f : 0.0f;
                seg_img.set(y, x, v, v, v);
            }
        ctx::write_png((fs::path(cfg.str("out")) / seg_path).string(), seg_img);
        json line;
        line["query"] = r.query;
        line["removal"] = rem_path;
        line["seg"] = seg_path;
        index << line.dump() << "\n";
    }
    std::printf("wrote %zu results to %s\n", requests.size(), cfg.str("out").c_str());
    return 0;
}

int cmd_bench(const ctx::CliConfig& cfg) {
    const auto mc = model_config_from(cfg);
    ctx::ContextModel model(mc, static_cast<std::uint64_t>(cfg.integer("seed")));
    ctx::SceneSpec scene;
    scene.panel_h = mc.panel_h;
    scene.panel_w = mc.panel_w;
    ctx::Rng rng(7);
    auto demo = ctx::generate_triple(scene, rng);
    demo.sample_id = "bench_demo";
    const auto grid = ctx::compose_grid(demo, demo, ctx::GridMode::chained);
    ctx::Rng mask_rng(8);
    const auto plan = ctx::sample_mask_plan(mask_rng, 1.0, mc.lattice_h(), mc.lattice_w(),
                                            ctx::MaskPhase::infer);
    ctx::NoGradGuard no_grad;
    const auto iters = std::max<std::int64_t>(1, cfg.integer("bench.iters"));
    (void)model.forward(grid, plan, {.pixel_head = false});  // warm up
    const auto t0 = std::chrono::steady_clock::now();
    for (std::int64_t i = 0; i < iters; ++i) (void)model.forward(grid, plan, {.pixel_head = false});
    const auto dt = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count() /
                    static_cast<double>(iters);
    const auto off = ctx::flop_estimate(mc, false).total();
    const auto on = ctx::flop_estimate(mc, true).total();
    std::printf("parameters:        %lld\n", static_cast<long long>(model.param_count()));
    std::printf("forward latency:   %.1f ms\n", dt * 1e3);
    std::printf("FLOPs (CAA off):   %.3fG\n", off / 1e9);
    std::printf("FLOPs (CAA on):    %.3fG (+%.2f%%)\n", on / 1e9, ctx::caa_flop_delta_pct(mc));
    return 0;
}

}  // namespace

int run_cli(int argc, char** argv) {
    CLI::App app{"ConText-style in-context text removal and segmentation"};
    app.require_subcommand(1);
    app.fallthrough();

    std::string config_path;
    std::vector<std::string> overrides;
    app.add_option("--config", config_path, "JSON config file with flat dotted keys")
        ->expected(1);
    app.add_option("--set", overrides, "override as key=value (repeatable)");

    struct FlagSpec {
        std::string flag, key, help;
    };
    const std::vector<FlagSpec> flags = {
        {"--seed", "seed", "root RNG seed"},
        {"--out", "out", "output directory"},
        {"--count", "data.count", "sample count (gen-data / gen-prompttext)"},
        {"--ratio", "train.mask_ratio", "training masking ratio"},
        {"--self-prompt-p", "train.self_prompt_p", "self-prompting probability"},
        {"--mode", "train.mode", "grid mode: chained|baseline_seg|baseline_rem"},
        {"--fusion", "model.fusion", "fusion mode: none|linear_only|caa"},
        {"--demos", "infer.demos", "demonstrations per query"},
        {"--threshold", "infer.threshold", "seg binarization threshold"},
        {"--data", "infer.data", "dataset manifest (infer)"},
        {"--manifest", "train.manifest", "dataset manifest (train)"},
        {"--ckpt", "infer.ckpt", "model checkpoint (infer)"},
    };
    std::map<std::string, std::string> flag_values;
    for (const auto& f : flags)
        app.add_option(f.flag, flag_values[f.key], f.help)->expected(1);
    bool double_flag = false;
    app.add_flag("--double", double_flag, "double inference");

    auto* gen_data = app.add_subcommand("gen-data", "generate a synthetic triple dataset");
    auto* gen_pt = app.add_subcommand("gen-prompttext", "generate the PromptText benchmark");
    auto* train = app.add_subcommand("train", "train a model on a dataset manifest");
    auto* eval = app.add_subcommand("eval", "evaluate predictions or a checkpoint");
    auto* infer = app.add_subcommand("infer", "run in-context inference from a checkpoint");
    auto* bench = app.add_subcommand("bench", "latency, parameter and FLOP report");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        ctx::CliConfig cfg;
        if (!config_path.empty()) cfg.load_file(config_path);
        for (const auto& [key, value] : flag_values)
            if (!value.empty()) cfg.set(key, value);
        if (double_flag) cfg.set("infer.double", "true");
        for (const auto& kv : overrides) {
            const auto eq = kv.find('=');
            if (eq == std::string::npos) throw ctx::ContractError("--set expects key=value: " + kv);
            cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
        }
        // eval shares the checkpoint/manifest flags with their train/infer keys
        if (eval->parsed()) {
            if (!cfg.str("infer.ckpt").empty()) cfg.set("eval.ckpt", cfg.str("infer.ckpt"));
            if (!cfg.str("train.manifest").empty()) cfg.set("eval.manifest", cfg.str("train.manifest"));
            if (!cfg.str("infer.data").empty()) cfg.set("eval.manifest", cfg.str("infer.data"));
        }

        ctx::configure_threads();
        if (gen_data->parsed()) return cmd_gen_data(cfg);
        if (gen_pt->parsed()) return cmd_gen_prompttext(cfg);
        if (train->parsed()) return cmd_train(cfg);
        if (eval->parsed()) return cmd_eval(cfg);
        if (infer->parsed()) return cmd_infer(cfg);
        if (bench->parsed()) return cmd_bench(cfg);
        return 1;
    } catch (const ctx::ContractError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    } catch (const ctx::ShapeError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "runtime error: %s\n", e.what());
        return 2;
    }
}

int main(int argc, char** argv) { return run_cli(argc, argv); }
