#include "ctx/manifest.hpp"

#include <filesystem>
#include <fstream>

#include <nlohmann/json.hpp>

#include "ctx/errors.hpp"

namespace ctx {

namespace {

namespace fs = std::filesystem;
using json = nlohmann::json;

std::string relative_dir_of(const std::string& manifest_path) {
    return fs::path(manifest_path).parent_path().string();
}

json record_to_json(const DatasetRecord& r) {
    json j;
    j["sample_id"] = r.sample_id;
    j["input_path"] = r.input_path;
    j["removal_path"] = r.removal_path;
    j["seg_path"] = r.seg_path;
    j["split"] = r.split;
    if (!r.marker_metadata_json.empty()) j["marker_metadata"] = json::parse(r.marker_metadata_json);
    return j;
}

void write_records(const std::string& manifest_path, const std::vector<DatasetRecord>& records) {
    std::ofstream os(manifest_path, std::ios::binary);
    if (!os) throw IoError("cannot write manifest: " + manifest_path);
    for (const auto& r : records) os << record_to_json(r).dump() << "\n";
}

}  // namespace

std::string write_dataset(const std::string& dir, const std::vector<SampleTriple>& triples,
                          double val_fraction) {
    fs::create_directories(fs::path(dir) / "images");
    std::vector<DatasetRecord> records;
    const auto n = static_cast<std::int64_t>(triples.size());
    const auto val_count = static_cast<std::int64_t>(val_fraction * static_cast<double>(n));
    for (std::int64_t i = 0; i < n; ++i) {
        const auto& t = triples[static_cast<std::size_t>(i)];
        DatasetRecord r;
        r.sample_id = t.sample_id;
        r.input_path = "images/" + t.sample_id + "_input.png";
        r.removal_path = "images/" + t.sample_id + "_removal.png";
        r.seg_path = "images/" + t.sample_id + "_seg.png";
        r.split = i >= n - val_count ? "val" : "train";
        write_png((fs::path(dir) / r.input_path).string(), t.input);
        write_png((fs::path(dir) / r.removal_path).string(), t.removal);
        write_png((fs::path(dir) / r.seg_path).string(), t.seg);
        records.push_back(std::move(r));
    }
    const auto manifest = (fs::path(dir) / "manifest.jsonl").string();
    write_records(manifest, records);
    return manifest;
}

std::string write_prompttext(const std::string& dir, const std::vector<PromptTextSample>& samples) {
    fs::create_directories(fs::path(dir) / "images");
    std::vector<DatasetRecord> records;
    for (const auto& s : samples) {
        for (std::size_t li = 0; li < s.levels.size(); ++li) {
            const auto& level = s.levels[li];
            const std::string stem =
                s.sample_id + "_e" + std::to_string(static_cast<int>(level.erase_probability * 100));
            DatasetRecord r;
            r.sample_id = stem;
            r.input_path = "images/" + stem + "_input.png";
            r.removal_path = "images/" + stem + "_removal.png";
            r.seg_path = "images/" + stem + "_seg.png";
            r.split = "test";
            json meta;
            meta["erase_probability"] = level.erase_probability;
            meta["kind"] = marker_kind_name(level.kind);
            meta["color"] = std::vector<std::string>{"red", "green", "blue"}[static_cast<std::size_t>(
                level.color_index)];
            meta["instance_marked"] = std::vector<int>(level.instance_marked.begin(),
                                                       level.instance_marked.end());
            r.marker_metadata_json = meta.dump();
            write_png((fs::path(dir) / r.input_path).string(), level.marked_input);
            write_png((fs::path(dir) / r.removal_path).string(), level.target_removal);
            write_png((fs::path(dir) / r.seg_path).string(), level.target_seg);
            records.push_back(std::move(r));
        }
    }
    const auto manifest = (fs::path(dir) / "manifest.jsonl").string();
    write_records(manifest, records);
    return manifest;
}

std::vector<DatasetRecord> read_manifest(const std::string& manifest_path) {
    std::ifstream is(manifest_path);
    if (!is) throw IoError("cannot open manifest: " + manifest_path);
    std::vector<DatasetRecord> records;
    std::string line;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        json j = json::parse(line, nullptr, false);
        if (j.is_discarded()) throw IoError("malformed manifest line in " + manifest_path);
        DatasetRecord r;
        r.sample_id = j.at("sample_id").get<std::string>();
        r.input_path = j.at("input_path").get<std::string>();
        r.removal_path = j.at("removal_path").get<std::string>();
        r.seg_path = j.at("seg_path").get<std::string>();
        r.split = j.value("split", "train");
        if (j.contains("marker_metadata")) r.marker_metadata_json = j["marker_metadata"].dump();
        records.push_back(std::move(r));
    }
    return records;
}

SampleTriple load_triple(const std::string& manifest_path, const DatasetRecord& record) {
    const fs::path base = relative_dir_of(manifest_path);
    SampleTriple t;
    t.sample_id = record.sample_id;
    t.input = read_png((base / record.input_path).string());
    t.removal = read_png((base / record.removal_path).string());
    t.seg = read_png((base / record.seg_path).string());
    for (auto& v : t.seg.pix) v = v >= 0.5f ? 1.0f : 0.0f;
    validate_triple(t);
    return t;
}

std::vector<SampleTriple> load_split(const std::string& manifest_path, const std::string& split) {
    std::vector<SampleTriple> out;
    for (const auto& r : read_manifest(manifest_path))
        if (split.empty() || r.split == split) out.push_back(load_triple(manifest_path, r));
    return out;
}

}  // namespace ctx
