#pragma once

#include <cstddef>
#include <functional>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "gradc/abstract.hpp"
#include "gradc/ad.hpp"
#include "gradc/frontend.hpp"
#include "gradc/infer.hpp"
#include "gradc/ir.hpp"
#include "gradc/opt.hpp"
#include "gradc/vm.hpp"

namespace gradc {

struct PipelineOptions {
    int opt_level = 2;
    AdOptions ad;
    InferOptions infer;
    std::ostream* opt_trace = nullptr;
    /// Receives optimizer warnings, one per line.
    std::ostream* diagnostics = nullptr;
    /// Called after every optimizer pass with the graph being optimized.
    std::function<void(std::string_view pass, std::size_t iteration, GraphId root)> after_pass;
    /// Audit the whole store after lowering, AD and every optimizer pass,
    /// failing with an internal error on the first violation.
    bool audit = false;
};

struct Compiled {
    GraphId graph;
    AbstractValue result;
    OptStats stats;
};

/// One source file taken through the pipeline. Each compile adds graphs
/// to the same store, so lowered functions and AD results are shared.
class Session {
public:
    explicit Session(std::string source, PipelineOptions options = {});

    const Module& ast() const { return ast_; }
    GraphStore& store() { return store_; }
    GradContext& ad() { return ad_; }
    const PipelineOptions& options() const { return options_; }

    /// The lowered graph of a top-level function.
    GraphId function(std::string_view name) const;
    /// Untyped `order`-fold derivative with respect to parameter `wrt`.
    GraphId differentiate(GraphId f, unsigned order, std::size_t wrt);
    /// Specialization alone, without optimization.
    Specialization specialize(GraphId g, std::span<const AbstractValue> sig);
    /// Specializes `g` for `sig` and optimizes the result at the configured level.
    Compiled compile(GraphId g, std::span<const AbstractValue> sig);
    Compiled compile(std::string_view fn, std::span<const AbstractValue> sig, unsigned order = 0, std::size_t wrt = 0);

    Value run(const Compiled& c, std::span<const Value> args, VmOptions vm = {});

    /// Fails with an internal error if the store audit reports anything.
    void check_store(std::string_view after) const;

private:
    std::string source_;
    PipelineOptions options_;
    Module ast_;
    GraphStore store_;
    GradContext ad_;
    LoweredModule lowered_;
};

/// Argument types for a call with these values; constants are dropped.
std::vector<AbstractValue> signature_of(std::span<const Value> args);

struct GradcheckRow {
    std::size_t argument = 0;
    std::size_t coordinate = 0;
    double analytic = 0;
    double numeric = 0;
    double error = 0;
};

struct GradcheckReport {
    std::vector<GradcheckRow> rows;
    double max_error = 0;
    bool passed = false;
};

/// Compares the compiled gradient of `fn` with central differences on the
/// untyped program for every f64 or tensor argument (or only `wrt`), using
/// |a - b| / max(1, |a|, |b|) per coordinate.
GradcheckReport gradcheck(Session& session, std::string_view fn, std::span<const Value> args,
                          std::optional<std::size_t> wrt, double eps = 1e-4, double tol = 1e-4);

} // namespace gradc
