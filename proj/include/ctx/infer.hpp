#pragma once

#include <vector>

#include "ctx/compositor.hpp"
#include "ctx/image.hpp"
#include "ctx/metrics.hpp"
#include "ctx/model.hpp"

namespace ctx {

struct InferenceRequest {
    Image query_input;
    std::vector<SampleTriple> demos;  // at least one
    double seg_threshold = 0.5;
    bool double_inference = false;
    std::vector<int> ensemble_layers;  // empty = average after every post block
};

struct InferenceResult {
    Image removal;              // clamped to [0,1]
    Image seg_prob;             // raw probability map replicated over channels
    MaskPlane seg_mask;         // prob >= threshold
};

/// Single-demonstration in-context inference: composes a chained grid whose
/// query labels are 0.5 placeholders, masks every query label patch, runs the
/// model, and extracts the query-row predictions.
InferenceResult infer(const InferenceRequest& request, const ContextModel& model);

/// Multi-demonstration feature ensemble: runs the demonstration-query grids as
/// one batch, averaging every grid's query tokens after each post-fusion
/// block, and decodes from the averaged features. k=1 is bit-identical to
/// infer.
InferenceResult infer_ensemble(const InferenceRequest& request, const ContextModel& model);

/// Second pass re-using the first pass's outputs as the demonstration.
InferenceResult infer_double(const InferenceRequest& request, const ContextModel& model);

/// The query slot of an inference grid: labels are constant placeholders whose
/// value never reaches the model (those embeddings become the mask token).
SampleTriple placeholder_query(const Image& query_input, float placeholder = 0.5f);

}  // namespace ctx
