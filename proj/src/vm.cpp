#include "gradc/vm.hpp"

#include <cmath>

#include <fmt/core.h>

#include "gradc/ad.hpp"

namespace gradc {

namespace {

[[noreturn]] void type_error(Primitive p, std::span<const Value> args) {
    std::string kinds;
    for (std::size_t i = 0; i < args.size(); ++i) kinds += (i ? ", " : "") + std::string(kind_name(args[i].kind()));
    fail(Stage::Vm, fmt::format("{}: unsupported operand types ({})", primitive_name(p), kinds));
}

std::string shape_text(const std::vector<std::int64_t>& shape) {
    std::string out;
    for (std::size_t i = 0; i < shape.size(); ++i) out += (i ? "x" : "") + std::to_string(shape[i]);
    return out.empty() ? "scalar" : out;
}

template <class F>
Value map_tensor(const Tensor& t, F f) {
    std::vector<double> out(t.data.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(t.data[i]);
    return Value::tensor(t.shape, std::move(out));
}

template <class F>
Value zip_tensor(Primitive p, const Tensor& a, const Tensor& b, F f) {
    if (a.shape != b.shape)
        fail(Stage::Vm, fmt::format("{}: elementwise shape mismatch ({} vs {})", primitive_name(p), shape_text(a.shape),
                                    shape_text(b.shape)));
    std::vector<double> out(a.data.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(a.data[i], b.data[i]);
    return Value::tensor(a.shape, std::move(out));
}

template <class F>
Value float_binary(Primitive p, std::span<const Value> args, F f) {
    const Value& a = args[0];
    const Value& b = args[1];
    if (a.is(ValueKind::Float) && b.is(ValueKind::Float)) return f(a.as_float(), b.as_float());
    if (a.is(ValueKind::Tensor) && b.is(ValueKind::Tensor)) return zip_tensor(p, a.as_tensor(), b.as_tensor(), f);
    type_error(p, args);
}

template <class F, class G>
Value ring_binary(Primitive p, std::span<const Value> args, F f, G g) {
    if (args[0].is(ValueKind::Int) && args[1].is(ValueKind::Int)) return g(args[0].as_int(), args[1].as_int());
    return float_binary(p, args, f);
}

template <class F>
Value float_unary(Primitive p, std::span<const Value> args, F f) {
    if (args[0].is(ValueKind::Float)) return f(args[0].as_float());
    if (args[0].is(ValueKind::Tensor)) return map_tensor(args[0].as_tensor(), f);
    type_error(p, args);
}

template <class F>
Value compare(Primitive p, std::span<const Value> args, F f) {
    const Value& a = args[0];
    const Value& b = args[1];
    if (a.is(ValueKind::Float) && b.is(ValueKind::Float)) return f(a.as_float(), b.as_float());
    if (a.is(ValueKind::Int) && b.is(ValueKind::Int)) return f(a.as_int(), b.as_int());
    if ((p == Primitive::Eq || p == Primitive::Ne) && a.is(ValueKind::Bool) && b.is(ValueKind::Bool))
        return f(a.as_bool(), b.as_bool());
    type_error(p, args);
}

const Tensor& matrix(Primitive p, const Value& v) {
    if (!v.is(ValueKind::Tensor) || v.as_tensor().rank() != 2)
        fail(Stage::Vm, fmt::format("{}: expected a rank-2 tensor, got {}", primitive_name(p),
                                    v.is(ValueKind::Tensor) ? "rank " + std::to_string(v.as_tensor().rank())
                                                            : std::string(kind_name(v.kind()))));
    return v.as_tensor();
}

std::size_t tuple_index(Primitive p, const Value& t, const Value& i) {
    if (!t.is(ValueKind::Tuple) || !i.is(ValueKind::Int))
        fail(Stage::Vm, fmt::format("{}: expected (tuple, i64), got ({}, {})", primitive_name(p), kind_name(t.kind()),
                                    kind_name(i.kind())));
    auto n = static_cast<std::int64_t>(t.as_tuple().size());
    if (i.as_int() < 0 || i.as_int() >= n)
        fail(Stage::Vm, fmt::format("{}: index {} out of range for a {}-tuple", primitive_name(p), i.as_int(), n));
    return static_cast<std::size_t>(i.as_int());
}

std::map<std::int64_t, Value> env_entries(Primitive p, const Value& e) {
    if (e.is(ValueKind::Env)) return e.as_env();
    // A function's zero sensitivity may still be the function itself
    // before it has passed through gadd or zeros_like.
    if (e.is_callable()) return {};
    fail(Stage::Vm, fmt::format("{}: expected an env, got {}", primitive_name(p), kind_name(e.kind())));
}

} // namespace

Value primitive_eval(Primitive p, std::span<const Value> args) {
    const auto& info = primitive_info(p);
    if (info.arity >= 0 && args.size() != static_cast<std::size_t>(info.arity))
        fail(Stage::Vm, fmt::format("{} takes {} argument(s), got {}", info.name, info.arity, args.size()));

    switch (p) {
        case Primitive::Add:
            return ring_binary(p, args, [](double a, double b) { return a + b; },
                               [](std::int64_t a, std::int64_t b) { return a + b; });
        case Primitive::Sub:
            return ring_binary(p, args, [](double a, double b) { return a - b; },
                               [](std::int64_t a, std::int64_t b) { return a - b; });
        case Primitive::Mul:
            return ring_binary(p, args, [](double a, double b) { return a * b; },
                               [](std::int64_t a, std::int64_t b) { return a * b; });
        case Primitive::Div: return float_binary(p, args, [](double a, double b) { return a / b; });
        case Primitive::Pow:
            if (!args[0].is(ValueKind::Float) || !args[1].is(ValueKind::Float)) type_error(p, args);
            return std::pow(args[0].as_float(), args[1].as_float());
        case Primitive::Neg:
            if (args[0].is(ValueKind::Int)) return -args[0].as_int();
            return float_unary(p, args, [](double a) { return -a; });
        case Primitive::Exp: return float_unary(p, args, [](double a) { return std::exp(a); });
        case Primitive::Log: return float_unary(p, args, [](double a) { return std::log(a); });
        case Primitive::Lt: return compare(p, args, [](auto a, auto b) { return a < b; });
        case Primitive::Gt: return compare(p, args, [](auto a, auto b) { return a > b; });
        case Primitive::Le: return compare(p, args, [](auto a, auto b) { return a <= b; });
        case Primitive::Ge: return compare(p, args, [](auto a, auto b) { return a >= b; });
        case Primitive::Eq: return compare(p, args, [](auto a, auto b) { return a == b; });
        case Primitive::Ne: return compare(p, args, [](auto a, auto b) { return a != b; });

        case Primitive::Matmul: {
            const Tensor& a = matrix(p, args[0]);
            const Tensor& b = matrix(p, args[1]);
            if (a.shape[1] != b.shape[0])
                fail(Stage::Vm, fmt::format("matmul: inner dimensions differ ({} @ {})", shape_text(a.shape),
                                            shape_text(b.shape)));
            std::int64_t m = a.shape[0], k = a.shape[1], n = b.shape[1];
            std::vector<double> out(static_cast<std::size_t>(m * n), 0.0);
            for (std::int64_t i = 0; i < m; ++i)
                for (std::int64_t l = 0; l < k; ++l) {
                    double x = a.data[i * k + l];
                    for (std::int64_t j = 0; j < n; ++j) out[i * n + j] += x * b.data[l * n + j];
                }
            return Value::tensor({m, n}, std::move(out));
        }
        case Primitive::Transpose: {
            const Tensor& a = matrix(p, args[0]);
            std::int64_t m = a.shape[0], n = a.shape[1];
            std::vector<double> out(a.data.size());
            for (std::int64_t i = 0; i < m; ++i)
                for (std::int64_t j = 0; j < n; ++j) out[j * m + i] = a.data[i * n + j];
            return Value::tensor({n, m}, std::move(out));
        }
        case Primitive::ReduceSum: {
            if (!args[0].is(ValueKind::Tensor)) type_error(p, args);
            double sum = 0.0;
            for (double x : args[0].as_tensor().data) sum += x;
            return sum;
        }
        case Primitive::Distribute: {
            if (!args[0].is(ValueKind::Float) || !args[1].is(ValueKind::Tuple)) type_error(p, args);
            std::vector<std::int64_t> shape;
            for (const auto& d : args[1].as_tuple()) {
                if (!d.is(ValueKind::Int) || d.as_int() < 0)
                    fail(Stage::Vm, "distribute: shape entries must be non-negative i64");
                shape.push_back(d.as_int());
            }
            auto size = static_cast<std::size_t>(shape_size(shape));
            return Value::tensor(std::move(shape), std::vector<double>(size, args[0].as_float()));
        }
        case Primitive::Shape: {
            if (!args[0].is(ValueKind::Tensor)) type_error(p, args);
            std::vector<Value> dims;
            for (auto d : args[0].as_tensor().shape) dims.emplace_back(d);
            return Value::tuple(std::move(dims));
        }

        case Primitive::MakeTuple: return Value::tuple({args.begin(), args.end()});
        case Primitive::TupleGetItem: return args[0].as_tuple()[tuple_index(p, args[0], args[1])];
        case Primitive::TupleSetItem: {
            auto i = tuple_index(p, args[0], args[1]);
            auto items = args[0].as_tuple();
            items[i] = args[2];
            return Value::tuple(std::move(items));
        }
        case Primitive::Switch:
            if (!args[0].is(ValueKind::Bool))
                fail(Stage::Vm, fmt::format("switch: condition must be bool, got {}", kind_name(args[0].kind())));
            return args[0].as_bool() ? args[1] : args[2];

        case Primitive::GAdd: return gadd(args[0], args[1]);
        case Primitive::ZerosLike: return zeros_like(args[0]);
        case Primitive::EnvGetItem: {
            auto entries = env_entries(p, args[0]);
            auto it = entries.find(args[1].as_int());
            return it == entries.end() ? zeros_like(args[2]) : it->second;
        }
        case Primitive::EnvSetItem: {
            auto entries = env_entries(p, args[0]);
            entries[args[1].as_int()] = args[2];
            return Value::env(std::move(entries));
        }

        case Primitive::Grad: internal_error(Stage::Vm, "grad needs a store and is handled by the interpreter");
        case Primitive::Dead: fail(Stage::Vm, "called a function value that inference found to be unused");
    }
    internal_error(Stage::Vm, "unknown primitive");
}

// ---------------------------------------------------------------------------
// interpreter

Vm::Vm(GraphStore& store, VmOptions options, GradContext* grad)
    : store_(store), options_(options), grad_(grad) {
    if (options_.shuffle_seed) rng_.emplace(static_cast<std::mt19937::result_type>(*options_.shuffle_seed));
}

Vm::~Vm() = default;

const Vm::Plan& Vm::plan(GraphId g) {
    auto it = plans_.find(g);
    if (it != plans_.end()) return *it->second;
    const Graph& graph = store_.graph(g);
    if (!graph.return_node.valid()) fail(Stage::Vm, fmt::format("graph '{}' has no return node", graph.name));
    auto p = std::make_unique<Plan>();
    p->schedule = store_.schedule(g, rng_ ? &*rng_ : nullptr);
    p->ret = graph.return_node;
    p->arity = graph.parameters.size();
    std::uint32_t slot = 0;
    for (auto param : graph.parameters) p->slot[param] = slot++;
    for (auto n : p->schedule) p->slot[n] = slot++;
    p->closed = store_.free_variables(g).empty();
    p->parent = store_.nesting_parent(g);
    return *plans_.emplace(g, std::move(p)).first->second;
}

Value Vm::make_closure(GraphId g, const std::shared_ptr<Frame>& frame) {
    const Plan& pl = plan(g);
    if (pl.closed) return Value(GraphRef{g});
    // Capture the innermost activation of the graph the closure is nested in;
    // everything it refers to is reachable from there.
    std::shared_ptr<Frame> f = frame;
    while (f && f->graph != *pl.parent) f = f->parent;
    if (!f)
        internal_error(Stage::Vm, fmt::format("no active frame of '{}' to close '{}' over",
                                              store_.graph(*pl.parent).name, store_.graph(g).name));
    return Value::closure(g, std::move(f));
}

Value Vm::value_of(NodeId n, const std::shared_ptr<Frame>& frame) {
    const Node& node = store_.node(n);
    if (node.is_constant()) {
        if (node.value.is(ValueKind::GraphRef)) return make_closure(node.value.as_graph_ref().graph, frame);
        return node.value;
    }
    for (const Frame* f = frame.get(); f; f = f->parent.get()) {
        if (f->graph == node.owner) {
            const Plan& pl = plan(f->graph);
            auto it = pl.slot.find(n);
            if (it == pl.slot.end())
                internal_error(Stage::Vm, fmt::format("node {} is not scheduled in '{}'", n.value, store_.graph(f->graph).name));
            return f->slots[it->second];
        }
    }
    internal_error(Stage::Vm, fmt::format("free variable {} of '{}' has no active owner frame", n.value,
                                          store_.graph(node.owner).name));
}

Value Vm::runtime_grad(const Value& fn) {
    if (!grad_) {
        owned_grad_ = std::make_unique<GradContext>(store_);
        grad_ = owned_grad_.get();
    }
    switch (fn.kind()) {
        case ValueKind::GraphRef: return Value(GraphRef{grad_->grad_wrapper(fn.as_graph_ref().graph)});
        case ValueKind::Closure: {
            const Closure& c = fn.as_closure();
            GraphId w = grad_->grad_wrapper(c.graph);
            // Same free variables as the differentiated closure.
            return make_closure(w, c.frame);
        }
        case ValueKind::Primitive: return Value(GraphRef{grad_->grad_wrapper(grad_->primitive_graph(fn.as_primitive()))});
        default: fail(Stage::Vm, fmt::format("grad: expected a function, got {}", kind_name(fn.kind())));
    }
}

std::optional<Value> Vm::enter(const Value& fn, std::vector<Value> args, std::vector<Activation>& stack) {
    ++steps_;
    std::shared_ptr<Frame> parent;
    GraphId g;
    switch (fn.kind()) {
        case ValueKind::Primitive: {
            Primitive p = fn.as_primitive();
            if (p == Primitive::Grad) {
                if (args.size() != 1) fail(Stage::Vm, fmt::format("grad takes 1 argument, got {}", args.size()));
                return runtime_grad(args[0]);
            }
            return primitive_eval(p, args);
        }
        case ValueKind::GraphRef:
            g = fn.as_graph_ref().graph;
            if (!plan(g).closed)
                internal_error(Stage::Vm, fmt::format("graph '{}' called without its closure", store_.graph(g).name));
            break;
        case ValueKind::Closure:
            g = fn.as_closure().graph;
            parent = fn.as_closure().frame;
            break;
        default: fail(Stage::Vm, fmt::format("value of type {} is not callable", kind_name(fn.kind())));
    }
    const Plan& pl = plan(g);
    if (args.size() != pl.arity)
        fail(Stage::Vm, fmt::format("'{}' takes {} argument(s), got {}", store_.graph(g).name, pl.arity, args.size()));
    if (stack.size() >= options_.recursion_limit)
        fail(Stage::Vm, fmt::format("recursion limit of {} activations exceeded", options_.recursion_limit));
    auto frame = std::make_shared<Frame>();
    frame->graph = g;
    frame->parent = std::move(parent);
    frame->slots.resize(pl.slot.size());
    for (std::size_t i = 0; i < args.size(); ++i) frame->slots[i] = std::move(args[i]);
    stack.push_back(Activation{&pl, std::move(frame)});
    return std::nullopt;
}

Value Vm::call(const Value& fn, std::span<const Value> args) {
    std::vector<Activation> stack;
    if (auto v = enter(fn, {args.begin(), args.end()}, stack)) return *v;
    while (true) {
        Activation& act = stack.back();
        const Plan& pl = *act.plan;
        if (act.pc == pl.schedule.size()) {
            Value result = value_of(pl.ret, act.frame);
            stack.pop_back();
            if (stack.empty()) return result;
            Activation& caller = stack.back();
            caller.frame->slots[caller.pending] = std::move(result);
            continue;
        }
        NodeId n = pl.schedule[act.pc];
        const Node& node = store_.node(n);
        Value callee = value_of(node.inputs[0], act.frame);
        std::vector<Value> call_args;
        call_args.reserve(node.inputs.size() - 1);
        for (std::size_t i = 1; i < node.inputs.size(); ++i) call_args.push_back(value_of(node.inputs[i], act.frame));

        std::uint32_t slot = pl.slot.at(n);
        ++act.pc;
        if (callee.is(ValueKind::Primitive) && callee.as_primitive() != Primitive::Grad) {
            ++steps_;
            act.frame->slots[slot] = primitive_eval(callee.as_primitive(), call_args);
            continue;
        }
        bool tail = act.pc == pl.schedule.size() && pl.ret == n;
        if (tail) {
            // The callee's result is this activation's result.
            stack.pop_back();
            if (stack.empty()) {
                if (auto v = enter(callee, std::move(call_args), stack)) return *v;
                continue;
            }
            Activation& caller = stack.back();
            std::uint32_t pending = caller.pending;
            auto frame = caller.frame;
            if (auto v = enter(callee, std::move(call_args), stack)) frame->slots[pending] = std::move(*v);
            continue;
        }
        act.pending = slot;
        auto frame = act.frame;
        if (auto v = enter(callee, std::move(call_args), stack)) frame->slots[slot] = std::move(*v);
    }
}

Value Vm::run(GraphId g, std::span<const Value> args) {
    const Plan& pl = plan(g);
    if (!pl.closed)
        fail(Stage::Vm, fmt::format("'{}' has free variables and cannot be run on its own", store_.graph(g).name));
    return call(Value(GraphRef{g}), args);
}

Value run(GraphStore& store, GraphId g, std::span<const Value> args, VmOptions options) {
    return Vm(store, options).run(g, args);
}

Value finite_diff_grad(GraphStore& store, GraphId g, std::span<const Value> args, std::size_t wrt, double eps) {
    if (wrt >= args.size())
        fail(Stage::Vm, fmt::format("wrt index {} out of range for {} argument(s)", wrt, args.size()));
    Vm vm(store);
    std::vector<Value> point(args.begin(), args.end());
    auto eval = [&](Value x) {
        point[wrt] = std::move(x);
        Value r = vm.run(g, point);
        if (!r.is(ValueKind::Float))
            fail(Stage::Vm, fmt::format("finite differences need an f64 output, got {}", kind_name(r.kind())));
        return r.as_float();
    };
    const Value& x = args[wrt];
    if (x.is(ValueKind::Float)) {
        double xi = x.as_float();
        double h = eps * (std::abs(xi) + 1.0);
        return (eval(xi + h) - eval(xi - h)) / (2.0 * h);
    }
    if (x.is(ValueKind::Tensor)) {
        const Tensor& t = x.as_tensor();
        std::vector<double> out(t.data.size());
        for (std::size_t i = 0; i < out.size(); ++i) {
            double h = eps * (std::abs(t.data[i]) + 1.0);
            auto shifted = t.data;
            shifted[i] = t.data[i] + h;
            double up = eval(Value::tensor(t.shape, shifted));
            shifted[i] = t.data[i] - h;
            double down = eval(Value::tensor(t.shape, shifted));
            out[i] = (up - down) / (2.0 * h);
        }
        return Value::tensor(t.shape, std::move(out));
    }
    fail(Stage::Vm, fmt::format("finite differences need an f64 or tensor argument, got {}", kind_name(x.kind())));
}

} // namespace gradc
