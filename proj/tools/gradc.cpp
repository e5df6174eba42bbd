#include <algorithm>
#include <cstdint>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <fmt/core.h>
#include <fmt/ostream.h>

#include "gradc/fuzz.hpp"
#include "gradc/ir_text.hpp"
#include "gradc/pipeline.hpp"

using namespace gradc;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUser = 1;
constexpr int kExitGradcheck = 2;
constexpr int kExitInternal = 3;

struct Config {
    std::string file;
    std::string fn;
    std::vector<std::string> values;
    std::size_t wrt = 0;
    bool wrt_given = false;
    unsigned order = 1;
    bool order_given = false;
    int opt_level = 2;
    std::string stage;
    std::string args_sig;
    double eps = 1e-4;
    double tol = 1e-4;
    std::string dump_after;
    bool opt_trace = false;
    std::uint64_t seed = 0;
    std::size_t count = 0;
    std::string fault_adjoint;
};

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(Stage::Cli, fmt::format("cannot read '{}'", path));
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::vector<Value> parse_values(const std::vector<std::string>& texts) {
    std::vector<Value> out;
    for (const auto& t : texts) out.push_back(parse_value(t));
    return out;
}

PipelineOptions pipeline_options(const Config& cfg) {
    PipelineOptions o;
    o.opt_level = cfg.opt_level;
    if (cfg.opt_trace) o.opt_trace = &std::cerr;
    o.diagnostics = &std::cerr;
    if (!cfg.fault_adjoint.empty()) {
        o.ad.fault_adjoint = primitive_by_name(cfg.fault_adjoint);
        if (!o.ad.fault_adjoint) fail(Stage::Cli, fmt::format("unknown primitive '{}'", cfg.fault_adjoint));
    }
    return o;
}

void check_pass_name(const std::string& pass) {
    static const char* passes[] = {"inline", "tuple", "fold", "algebraic", "cse", "dce"};
    if (std::find(std::begin(passes), std::end(passes), pass) == std::end(passes))
        fail(Stage::Cli, fmt::format("unknown pass '{}' for --dump-after", pass));
}

/// Owns the session for one command and wires --dump-after to it.
class Driver {
public:
    explicit Driver(const Config& cfg) {
        PipelineOptions o = pipeline_options(cfg);
        if (!cfg.dump_after.empty()) {
            check_pass_name(cfg.dump_after);
            o.after_pass = [this, pass_name = cfg.dump_after](std::string_view pass, std::size_t it, GraphId root) {
                if (pass != pass_name) return;
                GraphId roots[] = {root};
                fmt::print(std::cerr, "# after {} (iteration {})\n{}", pass, it, dump_text(session_->store(), roots));
            };
        }
        session_.emplace(read_file(cfg.file), std::move(o));
    }
    Driver(const Driver&) = delete;
    Driver& operator=(const Driver&) = delete;

    Session& session() { return *session_; }

private:
    std::optional<Session> session_;
};

std::size_t checked_wrt(const Config& cfg, std::size_t arity) {
    if (cfg.wrt >= arity) fail(Stage::Cli, fmt::format("--wrt {} out of range for {} argument(s)", cfg.wrt, arity));
    return cfg.wrt;
}

int cmd_run(const Config& cfg) {
    Driver d(cfg);
    auto args = parse_values(cfg.values);
    auto sig = cfg.args_sig.empty() ? signature_of(args) : parse_signature(cfg.args_sig);
    Compiled c = d.session().compile(cfg.fn, sig, 0);
    fmt::print("{}\n", to_string(d.session().run(c, args)));
    return kExitOk;
}

int cmd_grad(const Config& cfg) {
    Driver d(cfg);
    auto args = parse_values(cfg.values);
    std::size_t wrt = checked_wrt(cfg, args.size());
    Compiled c = d.session().compile(cfg.fn, signature_of(args), cfg.order, wrt);
    fmt::print("{}\n", to_string(d.session().run(c, args)));
    return kExitOk;
}

int cmd_gradcheck(const Config& cfg) {
    Driver d(cfg);
    auto args = parse_values(cfg.values);
    std::optional<std::size_t> wrt;
    if (cfg.wrt_given) wrt = cfg.wrt;
    GradcheckReport r = gradcheck(d.session(), cfg.fn, args, wrt, cfg.eps, cfg.tol);
    fmt::print("{:>4} {:>6} {:>24} {:>24} {:>12}\n", "arg", "coord", "analytic", "numeric", "rel_err");
    for (const auto& row : r.rows)
        fmt::print("{:>4} {:>6} {:>24} {:>24} {:>12.3e}\n", row.argument, row.coordinate, format_float(row.analytic),
                   format_float(row.numeric), row.error);
    fmt::print("max rel err {:.3e} (tol {:.1e}): {}\n", r.max_error, cfg.tol, r.passed ? "PASS" : "FAIL");
    return r.passed ? kExitOk : kExitGradcheck;
}

int cmd_dump(const Config& cfg) {
    static const char* stages[] = {"ast", "lowered", "specialized", "ad", "optimized"};
    if (std::find(std::begin(stages), std::end(stages), cfg.stage) == std::end(stages))
        fail(Stage::Cli, fmt::format("unknown stage '{}' (expected ast, lowered, specialized, ad or optimized)", cfg.stage));
    Driver d(cfg);
    Session& s = d.session();
    if (cfg.stage == "ast") {
        fmt::print("{}", format_ast(s.ast()));
        return kExitOk;
    }
    GraphId f = s.function(cfg.fn);
    auto print = [&](GraphId g) {
        GraphId roots[] = {g};
        fmt::print("{}", dump_text(s.store(), roots));
    };
    if (cfg.stage == "lowered") {
        print(f);
        return kExitOk;
    }
    // Derivative stages default to first order; an explicit --order 0 dumps f itself.
    unsigned order = cfg.stage == "specialized" && !cfg.order_given ? 0 : cfg.order;
    if (cfg.stage == "ad") {
        if (order == 0) fail(Stage::Cli, "--stage ad needs --order of at least 1");
        print(s.differentiate(f, order, cfg.wrt));
        return kExitOk;
    }
    if (cfg.args_sig.empty()) fail(Stage::Cli, fmt::format("--stage {} requires --args-sig", cfg.stage));
    auto sig = parse_signature(cfg.args_sig);
    if (order > 0) checked_wrt(cfg, sig.size());
    GraphId g = s.differentiate(f, order, cfg.wrt);
    if (cfg.stage == "specialized")
        print(s.specialize(g, sig).graph);
    else
        print(s.compile(g, sig).graph);
    return kExitOk;
}

int cmd_fuzz(const Config& cfg) {
    if (cfg.count == 0) {
        FuzzProgram p = generate_program(cfg.seed);
        std::string args;
        for (const auto& a : p.args) args += " " + to_string(a);
        fmt::print("# seed {} category {}\n# args{}\n{}", p.seed, category_name(p.category), args, p.source);
        return kExitOk;
    }
    std::size_t failed = 0;
    for (std::size_t i = 0; i < cfg.count; ++i) {
        FuzzProgram p = generate_program(cfg.seed + i);
        std::string verdict;
        double err = 0;
        try {
            PipelineOptions o = pipeline_options(cfg);
            o.audit = true;
            Session s(p.source, o);
            GradcheckReport r = gradcheck(s, p.entry, p.args, std::nullopt, cfg.eps, cfg.tol);
            err = r.max_error;
            verdict = r.passed ? "PASS" : "FAIL";
        } catch (const Error& e) {
            if (e.internal()) throw;
            verdict = fmt::format("ERROR {}", e.message());
        }
        if (verdict != "PASS") ++failed;
        fmt::print("seed {:>6} {:<13} {:.3e} {}\n", p.seed, category_name(p.category), err, verdict);
    }
    fmt::print("{} of {} programs passed\n", cfg.count - failed, cfg.count);
    return failed == 0 ? kExitOk : kExitGradcheck;
}

void report(const Error& e) {
    std::string where = e.loc().known() ? fmt::format("{}:{}: ", e.loc().line, e.loc().column) : "";
    fmt::print(std::cerr, "[{}] {}{}{}\n", stage_name(e.stage()), where, e.internal() ? "internal error: " : "",
               e.message());
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"gradc: compiler for a small differentiable array language"};
    app.require_subcommand(1);
    Config cfg;

    auto common = [&](CLI::App* sub, bool values) {
        sub->add_option("file", cfg.file, "source file")->required();
        sub->add_option("fn", cfg.fn, "entry function")->required();
        if (values) sub->add_option("values", cfg.values, "argument values, e.g. 2.0 7i t[2](1,2) (1.0, true)");
        sub->add_option("--opt-level", cfg.opt_level, "0 none, 1 tuple+fold+dce, 2 full")->check(CLI::Range(0, 2));
        sub->add_option("--dump-after", cfg.dump_after, "print the IR to stderr after the named optimizer pass");
        sub->add_flag("--opt-trace", cfg.opt_trace, "log every rewrite to stderr");
        sub->add_option("--fault-adjoint", cfg.fault_adjoint)->group("");
    };
    auto wrt = [&](CLI::App* sub) {
        sub->add_option_function<std::size_t>(
            "--wrt", [&](std::size_t k) { cfg.wrt = k, cfg.wrt_given = true; }, "argument index to differentiate");
    };
    auto order = [&](CLI::App* sub) {
        sub->add_option_function<unsigned>(
            "--order", [&](unsigned n) { cfg.order = n, cfg.order_given = true; }, "number of grad applications");
    };

    auto* run = app.add_subcommand("run", "compile and run a function");
    common(run, true);
    run->add_option("--args-sig", cfg.args_sig, "argument signature, e.g. \"f64, t[3]\"");

    auto* grad = app.add_subcommand("grad", "compile and run the gradient of a function");
    common(grad, true);
    wrt(grad);
    order(grad);

    auto* check = app.add_subcommand("gradcheck", "compare the gradient with central differences");
    common(check, true);
    wrt(check);
    check->add_option("--eps", cfg.eps, "relative finite-difference step");
    check->add_option("--tol", cfg.tol, "maximum relative error");

    auto* dump = app.add_subcommand("dump", "print a pipeline stage");
    common(dump, false);
    wrt(dump);
    order(dump);
    dump->add_option("--stage", cfg.stage, "ast, lowered, specialized, ad or optimized")->required();
    dump->add_option("--args-sig", cfg.args_sig, "argument signature for specialized and optimized");

    auto* fuzz = app.add_subcommand("fuzz", "print a generated program, or gradcheck a batch of them");
    fuzz->add_option("--seed", cfg.seed, "first seed");
    fuzz->add_option("--count", cfg.count, "number of programs to gradcheck");
    fuzz->add_option("--eps", cfg.eps, "relative finite-difference step");
    fuzz->add_option("--tol", cfg.tol, "maximum relative error");
    fuzz->add_option("--opt-level", cfg.opt_level)->check(CLI::Range(0, 2));
    fuzz->add_option("--fault-adjoint", cfg.fault_adjoint)->group("");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? kExitOk : kExitUser;
    }

    try {
        if (*run) return cmd_run(cfg);
        if (*grad) return cmd_grad(cfg);
        if (*check) return cmd_gradcheck(cfg);
        if (*dump) return cmd_dump(cfg);
        return cmd_fuzz(cfg);
    } catch (const Error& e) {
        report(e);
        return e.internal() ? kExitInternal : kExitUser;
    } catch (const std::exception& e) {
        fmt::print(std::cerr, "[cli] internal error: {}\n", e.what());
        return kExitInternal;
    }
}
