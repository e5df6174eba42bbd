#pragma once

#include <cstddef>
#include <functional>
#include <map>
#include <ostream>
#include <string>
#include <string_view>
#include <vector>

#include "gradc/infer.hpp"
#include "gradc/ir.hpp"

namespace gradc {

struct OptOptions {
    /// 0 disables everything, 1 runs local rewrites, 2 also inlines.
    int level = 2;
    std::size_t max_iterations = 1000;
    /// Graphs with at most this many apply nodes are inlined at every call
    /// site; larger ones only when called once.
    std::size_t inline_threshold = 64;
    /// Receives one `RULE <name> @%<node>` line per rewrite.
    std::ostream* trace = nullptr;
    /// Called after each pass with its name and iteration number.
    std::function<void(std::string_view pass, std::size_t iteration)> after_pass;
};

struct OptStats {
    std::size_t iterations = 0;
    std::map<std::string, std::size_t> rules;
    std::size_t removed_nodes = 0;
    std::size_t removed_graphs = 0;
    /// Constant folds that were skipped because evaluation failed or was not finite.
    std::vector<std::string> warnings;

    std::size_t fired(const std::string& rule) const {
        auto it = rules.find(rule);
        return it == rules.end() ? 0 : it->second;
    }
};

/// Rewrites the graphs reachable from `root` until no rule applies:
/// inlining, tuple and env simplification, constant folding, algebraic
/// identities, common subexpressions and dead code. `types`, when given,
/// enables the rules that need a node's type and is kept up to date for
/// inlined copies. Graphs that become unreachable from `root` are removed.
OptStats optimize(GraphStore& store, GraphId root, TypeMap* types = nullptr, const OptOptions& options = {});

} // namespace gradc
