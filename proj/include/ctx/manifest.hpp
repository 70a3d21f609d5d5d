#pragma once

#include <string>
#include <vector>

#include "ctx/compositor.hpp"
#include "ctx/synthetic.hpp"

namespace ctx {

/// One JSON-lines manifest record. Paths are relative to the manifest file.
struct DatasetRecord {
    std::string sample_id;
    std::string input_path;
    std::string removal_path;
    std::string seg_path;
    std::string split;                 // "train" | "val" | "test"
    std::string marker_metadata_json;  // empty unless a PromptText record
};

/// Writes PNG panels plus manifest.jsonl into dir. Split assignment: the last
/// floor(val_fraction*count) samples become "val". Returns the manifest path.
std::string write_dataset(const std::string& dir, const std::vector<SampleTriple>& triples,
                          double val_fraction);

/// Writes a PromptText benchmark: per sample and level, the marked input, the
/// rebuilt targets and a record carrying the marker metadata.
std::string write_prompttext(const std::string& dir, const std::vector<PromptTextSample>& samples);

std::vector<DatasetRecord> read_manifest(const std::string& manifest_path);

/// Loads the three panels of a record (values quantized to the 8-bit grid;
/// seg panels are re-binarized at 0.5).
SampleTriple load_triple(const std::string& manifest_path, const DatasetRecord& record);

std::vector<SampleTriple> load_split(const std::string& manifest_path, const std::string& split);

}  // namespace ctx
