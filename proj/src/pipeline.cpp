#include "gradc/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <fmt/core.h>

namespace gradc {

Session::Session(std::string source, PipelineOptions options)
    : source_(std::move(source)),
      options_(std::move(options)),
      ast_(parse(source_)),
      ad_(store_, options_.ad),
      lowered_(lower(store_, ast_)) {
    if (options_.audit) check_store("lowering");
}

GraphId Session::function(std::string_view name) const { return lowered_.entry(std::string(name)); }

GraphId Session::differentiate(GraphId f, unsigned order, std::size_t wrt) {
    GraphId g = f;
    for (unsigned i = 0; i < order; ++i) g = ad_.grad_wrapper(g, wrt);
    if (options_.audit && order > 0) check_store("AD");
    return g;
}

Specialization Session::specialize(GraphId g, std::span<const AbstractValue> sig) {
    Specialization s = gradc::specialize(store_, ad_, g, sig, options_.infer);
    if (options_.audit) check_store("specialization");
    return s;
}

Compiled Session::compile(GraphId g, std::span<const AbstractValue> sig) {
    Specialization s = specialize(g, sig);
    OptOptions o;
    o.level = options_.opt_level;
    o.trace = options_.opt_trace;
    o.after_pass = [&](std::string_view pass, std::size_t it) {
        if (options_.audit) check_store(fmt::format("{} (iteration {})", pass, it));
        if (options_.after_pass) options_.after_pass(pass, it, s.graph);
    };
    Compiled c;
    c.graph = s.graph;
    c.result = s.result;
    c.stats = optimize(store_, s.graph, &s.types, o);
    if (options_.diagnostics)
        for (const auto& w : c.stats.warnings) *options_.diagnostics << "[opt] warning: " << w << "\n";
    return c;
}

Compiled Session::compile(std::string_view fn, std::span<const AbstractValue> sig, unsigned order, std::size_t wrt) {
    return compile(differentiate(function(fn), order, wrt), sig);
}

Value Session::run(const Compiled& c, std::span<const Value> args, VmOptions vm) {
    return Vm(store_, vm, &ad_).run(c.graph, args);
}

void Session::check_store(std::string_view after) const {
    auto problems = store_.audit();
    if (problems.empty()) return;
    internal_error(Stage::Ir, fmt::format("store audit after {} failed: {}{}", after, problems.front(),
                                          problems.size() > 1 ? fmt::format(" (+{} more)", problems.size() - 1) : ""));
}

std::vector<AbstractValue> signature_of(std::span<const Value> args) {
    std::vector<AbstractValue> out;
    for (const auto& a : args) out.push_back(abstract_of(a, false));
    return out;
}

namespace {

std::vector<double> coordinates(const Value& v) {
    if (v.is(ValueKind::Float)) return {v.as_float()};
    if (v.is(ValueKind::Tensor)) return v.as_tensor().data;
    fail(Stage::Cli, fmt::format("gradient of kind {} cannot be checked", kind_name(v.kind())));
}

bool differentiable_argument(const Value& v) { return v.is(ValueKind::Float) || v.is(ValueKind::Tensor); }

} // namespace

GradcheckReport gradcheck(Session& session, std::string_view fn, std::span<const Value> args,
                          std::optional<std::size_t> wrt, double eps, double tol) {
    GradcheckReport report;
    GraphId f = session.function(fn);
    auto sig = signature_of(args);
    std::vector<std::size_t> which;
    if (wrt) {
        if (*wrt >= args.size())
            fail(Stage::Cli, fmt::format("--wrt {} out of range for {} argument(s)", *wrt, args.size()));
        if (!differentiable_argument(args[*wrt])) fail(Stage::Cli, fmt::format("argument {} is not f64 or a tensor", *wrt));
        which.push_back(*wrt);
    } else {
        for (std::size_t i = 0; i < args.size(); ++i)
            if (differentiable_argument(args[i])) which.push_back(i);
    }
    if (which.empty()) fail(Stage::Cli, "no f64 or tensor argument to check");

    for (std::size_t k : which) {
        Compiled c = session.compile(session.differentiate(f, 1, k), sig);
        auto analytic = coordinates(session.run(c, args));
        auto numeric = coordinates(finite_diff_grad(session.store(), f, args, k, eps));
        if (analytic.size() != numeric.size()) internal_error(Stage::Cli, "gradient shape differs from its argument");
        for (std::size_t i = 0; i < analytic.size(); ++i) {
            double a = analytic[i], b = numeric[i];
            double err = std::abs(a - b) / std::max({1.0, std::abs(a), std::abs(b)});
            if (std::isnan(err)) err = std::numeric_limits<double>::infinity();
            report.rows.push_back({k, i, a, b, err});
            report.max_error = std::max(report.max_error, err);
        }
    }
    report.passed = report.max_error <= tol;
    return report;
}

} // namespace gradc
