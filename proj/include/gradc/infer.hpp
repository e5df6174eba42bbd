#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "gradc/abstract.hpp"
#include "gradc/ir.hpp"

namespace gradc {

class GradContext;

using TypeMap = std::unordered_map<NodeId, AbstractValue>;

struct InferOptions {
    std::size_t max_rounds = 32;
    /// Distinct call signatures allowed per graph before inference gives up.
    std::size_t max_contexts_per_graph = 100;
};

struct Specialization {
    GraphId graph;
    AbstractValue result;
    /// Types of the parameters and apply nodes of every specialized graph.
    TypeMap types;
    std::size_t contexts = 0;
    std::size_t rounds = 0;
};

/// Infers types, shapes and known constants for `root` called with
/// arguments of types `args`, then emits one monomorphic copy of every
/// (graph, calling context, signature) reached. `grad` nodes met on the
/// way are expanded through `ad` into wrapper graphs, which are then
/// specialized like any other callee.
Specialization specialize(GraphStore& store, GradContext& ad, GraphId root, std::span<const AbstractValue> args,
                          InferOptions options = {});

/// `(f64, t[3])` style rendering of an argument list.
std::string signature_text(std::span<const AbstractValue> args);

} // namespace gradc
