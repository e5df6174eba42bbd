#include "gradc/ad.hpp"

#include <algorithm>
#include <unordered_set>

#include <fmt/core.h>

namespace gradc {

namespace {

class Builder {
public:
    Builder(GraphStore& store, GraphId g) : store_(store), g_(g) {}

    NodeId operator()(Primitive p, std::initializer_list<NodeId> args) {
        std::vector<NodeId> inputs{store_.constant_prim(p)};
        inputs.insert(inputs.end(), args);
        return store_.apply(g_, std::move(inputs));
    }
    NodeId call(NodeId callee, std::vector<NodeId> args) {
        return store_.apply(g_, callee, args);
    }
    NodeId item(NodeId tuple, std::size_t i) {
        return (*this)(Primitive::TupleGetItem, {tuple, store_.constant(Value(static_cast<std::int64_t>(i)))});
    }
    NodeId tuple(std::vector<NodeId> items) {
        items.insert(items.begin(), store_.constant_prim(Primitive::MakeTuple));
        return store_.apply(g_, std::move(items));
    }
    NodeId newenv() { return store_.constant(Value::env()); }
    NodeId zeros(NodeId like) { return (*this)(Primitive::ZerosLike, {like}); }

private:
    GraphStore& store_;
    GraphId g_;
};

std::string arrow_name(std::string_view arrow, const std::string& name) { return std::string(arrow) + name; }

} // namespace

GradContext::GradContext(GraphStore& store, AdOptions options) : store_(store), options_(options) {}

std::optional<NodeId> GradContext::wrapper_call(GraphId w) const {
    auto it = wrapper_calls_.find(w);
    if (it == wrapper_calls_.end()) return std::nullopt;
    return it->second;
}

// ---------------------------------------------------------------------------
// primitives

static bool bakes_second_argument(Primitive p) {
    switch (p) {
        case Primitive::Pow:
        case Primitive::TupleGetItem:
        case Primitive::TupleSetItem:
        case Primitive::EnvGetItem:
        case Primitive::EnvSetItem: return true;
        default: return false;
    }
}

GraphId GradContext::primitive_j(Primitive p, std::size_t arity, const std::optional<Value>& baked) {
    const auto& info = primitive_info(p);
    if (!info.differentiable) fail(Stage::Ad, fmt::format("primitive '{}' has no adjoint", info.name));
    if (info.arity >= 0 && static_cast<std::size_t>(info.arity) != arity)
        fail(Stage::Ad, fmt::format("'{}' takes {} argument(s), got {}", info.name, info.arity, arity));
    if (baked && !bakes_second_argument(p)) internal_error(Stage::Ad, "constant argument cannot be baked into this primitive");
    auto key = std::make_tuple(p, arity, baked ? to_string(*baked) : std::string());
    if (auto it = prim_j_.find(key); it != prim_j_.end()) return it->second;

    std::string name(info.name);
    GraphId fg = store_.new_graph(arrow_name("▶", name));
    GraphId bg = store_.new_graph(arrow_name("◀", name));
    store_.add_flags(fg, kAdGenerated);
    store_.add_flags(bg, kAdGenerated | kBackpropagator);
    prim_j_[key] = fg;

    std::vector<NodeId> a;
    for (std::size_t i = 0; i < arity; ++i) a.push_back(store_.add_parameter(fg, fmt::format("a{}", i)));
    // The parameter stays so call sites keep their arity.
    if (baked) a[1] = store_.constant(*baked);
    Builder f(store_, fg);
    NodeId r = f.call(store_.constant_prim(p), a);
    store_.set_node_name(r, "r");
    store_.set_return(fg, f.tuple({r, store_.constant_graph(bg)}));

    NodeId d = store_.add_parameter(bg, "dout");
    Builder b(store_, bg);
    std::vector<NodeId> s(arity);
    switch (p) {
        case Primitive::Add: s = {d, d}; break;
        case Primitive::Sub: s = {d, b(Primitive::Neg, {d})}; break;
        case Primitive::Mul: s = {b(Primitive::Mul, {d, a[1]}), b(Primitive::Mul, {d, a[0]})}; break;
        case Primitive::Div:
            s = {b(Primitive::Div, {d, a[1]}),
                 b(Primitive::Neg, {b(Primitive::Div, {b(Primitive::Mul, {d, a[0]}), b(Primitive::Mul, {a[1], a[1]})})})};
            break;
        case Primitive::Pow: {
            NodeId km1 = b(Primitive::Sub, {a[1], store_.constant(Value(1.0))});
            s[0] = b(Primitive::Mul, {d, b(Primitive::Mul, {a[1], b(Primitive::Pow, {a[0], km1})})});
            s[1] = baked ? b.zeros(a[1]) : b(Primitive::Mul, {d, b(Primitive::Mul, {r, b(Primitive::Log, {a[0]})})});
            break;
        }
        case Primitive::Neg: s = {b(Primitive::Neg, {d})}; break;
        case Primitive::Exp: s = {b(Primitive::Mul, {d, r})}; break;
        case Primitive::Log: s = {b(Primitive::Div, {d, a[0]})}; break;
        case Primitive::Lt:
        case Primitive::Gt:
        case Primitive::Le:
        case Primitive::Ge:
        case Primitive::Eq:
        case Primitive::Ne: s = {b.zeros(a[0]), b.zeros(a[1])}; break;
        case Primitive::Matmul:
            s = {b(Primitive::Matmul, {d, b(Primitive::Transpose, {a[1]})}),
                 b(Primitive::Matmul, {b(Primitive::Transpose, {a[0]}), d})};
            break;
        case Primitive::Transpose: s = {b(Primitive::Transpose, {d})}; break;
        case Primitive::ReduceSum: s = {b(Primitive::Distribute, {d, b(Primitive::Shape, {a[0]})})}; break;
        case Primitive::Distribute: s = {b(Primitive::ReduceSum, {d}), b.zeros(a[1])}; break;
        case Primitive::Shape: s = {b.zeros(a[0])}; break;
        case Primitive::MakeTuple:
            for (std::size_t i = 0; i < arity; ++i) s[i] = b.item(d, i);
            break;
        case Primitive::TupleGetItem:
            s = {b(Primitive::TupleSetItem, {b.zeros(a[0]), a[1], d}), b.zeros(a[1])};
            break;
        case Primitive::TupleSetItem:
            s = {b(Primitive::TupleSetItem, {d, a[1], b.zeros(a[2])}), b.zeros(a[1]),
                 b(Primitive::TupleGetItem, {d, a[1]})};
            break;
        case Primitive::Switch:
            s = {b.zeros(a[0]), b(Primitive::Switch, {a[0], d, b.zeros(a[2])}),
                 b(Primitive::Switch, {a[0], b.zeros(a[1]), d})};
            break;
        case Primitive::GAdd: s = {d, d}; break;
        case Primitive::ZerosLike: s = {b.zeros(a[0])}; break;
        case Primitive::EnvGetItem:
            s = {b(Primitive::EnvSetItem, {b.newenv(), a[1], d}), b.zeros(a[1]), b.zeros(a[2])};
            break;
        case Primitive::EnvSetItem:
            s = {b(Primitive::EnvSetItem, {d, a[1], b.zeros(a[2])}), b.zeros(a[1]),
                 b(Primitive::EnvGetItem, {d, a[1], a[2]})};
            break;
        case Primitive::Grad:
        case Primitive::Dead: internal_error(Stage::Ad, "non-differentiable primitive reached the adjoint table");
    }
    if (options_.fault_adjoint == p && !s.empty()) s[0] = b(Primitive::GAdd, {s[0], s[0]});

    std::vector<NodeId> out{b.newenv()};
    out.insert(out.end(), s.begin(), s.end());
    store_.set_return(bg, b.tuple(std::move(out)));
    return fg;
}

GraphId GradContext::primitive_graph(Primitive p) {
    if (auto it = prim_graphs_.find(p); it != prim_graphs_.end()) return it->second;
    const auto& info = primitive_info(p);
    if (info.arity < 0) fail(Stage::Ad, fmt::format("grad of variadic primitive '{}' is not supported", info.name));
    GraphId g = store_.new_graph(std::string(info.name));
    std::vector<NodeId> params;
    for (int i = 0; i < info.arity; ++i) params.push_back(store_.add_parameter(g, fmt::format("x{}", i)));
    store_.set_return(g, store_.apply(g, store_.constant_prim(p), params));
    prim_graphs_[p] = g;
    return g;
}

// ---------------------------------------------------------------------------
// graphs

const std::vector<NodeId>& GradContext::closure_fvs(GraphId h) {
    auto it = fvs_.find(h);
    if (it == fvs_.end()) it = fvs_.emplace(h, store_.free_variables(h)).first;
    return it->second;
}

void GradContext::plan(GraphId root, std::vector<Family>& out, std::vector<GraphId>& work) {
    Family fam;
    fam.root = root;
    std::vector<GraphId> graphs{root};
    auto nested = store_.descendants(root);
    graphs.insert(graphs.end(), nested.begin(), nested.end());
    std::unordered_set<GraphId> in_family(graphs.begin(), graphs.end());

    for (auto g : graphs) {
        Member m{g};
        for (auto p = store_.nesting_parent(g); p && g != root; p = store_.nesting_parent(*p)) {
            ++m.depth;
            if (*p == root) break;
        }
        m.schedule = store_.schedule(g);
        m.free_variables = store_.free_variables(g);
        auto consider = [&](NodeId n) {
            auto h = store_.graph_of_constant(n);
            if (!h) return;
            closure_fvs(*h);
            if (!in_family.contains(*h) && !memo_.contains({*h, *h})) work.push_back(*h);
        };
        for (auto y : m.schedule)
            for (auto in : store_.node(y).inputs) consider(in);
        consider(store_.graph(g).return_node);
        fam.members.push_back(std::move(m));
    }
    std::stable_sort(fam.members.begin(), fam.members.end(),
                     [](const Member& a, const Member& b) { return a.depth < b.depth; });
    out.push_back(std::move(fam));
}

GraphId GradContext::jtransform(GraphId g) {
    if (auto it = memo_.find({g, g}); it != memo_.end()) return it->second;

    // All analyses happen before the first mutation so they are computed once.
    std::vector<Family> families;
    std::vector<GraphId> work{g};
    std::unordered_set<GraphId> planned;
    while (!work.empty()) {
        GraphId r = work.back();
        work.pop_back();
        if (memo_.contains({r, r}) || !planned.insert(r).second) continue;
        plan(r, families, work);
    }

    for (auto& fam : families) {
        for (const auto& m : fam.members) {
            const Graph& src = store_.graph(m.graph);
            std::string name = src.name;
            std::vector<NodeId> params = src.parameters;
            GraphId fg = store_.new_graph(arrow_name("▶", name));
            GraphId bg = store_.new_graph(arrow_name("◀", name));
            store_.add_flags(fg, kAdGenerated);
            store_.add_flags(bg, kAdGenerated | kBackpropagator);
            store_.add_parameter(bg, "dout");
            fam.images[m.graph] = fg;
            fam.backward[m.graph] = bg;
            memo_[{fam.root, m.graph}] = fg;
            for (auto p : params) fam.forward[p] = store_.add_parameter(fg, store_.node(p).name);
        }
    }
    for (auto& fam : families)
        for (const auto& m : fam.members) build_forward(fam, m);
    for (auto& fam : families)
        for (const auto& m : fam.members) build_backward(fam, m);
    return memo_.at({g, g});
}

NodeId GradContext::forward_of(Family& fam, NodeId n) {
    const Node& node = store_.node(n);
    if (node.is_constant()) {
        if (node.value.is(ValueKind::GraphRef)) {
            GraphId h = node.value.as_graph_ref().graph;
            if (auto it = fam.images.find(h); it != fam.images.end()) return store_.constant_graph(it->second);
            return store_.constant_graph(jtransform(h));
        }
        if (node.value.is(ValueKind::Primitive)) {
            Primitive p = node.value.as_primitive();
            if (p == Primitive::Dead) return n;
            const auto& info = primitive_info(p);
            if (info.arity < 0)
                fail(Stage::Ad, fmt::format("'{}' used as a value cannot be differentiated", info.name), node.loc);
            return store_.constant_graph(primitive_j(p, static_cast<std::size_t>(info.arity)));
        }
        return n;
    }
    if (!fam.images.contains(node.owner)) return n; // owned outside: a constant here
    auto it = fam.forward.find(n);
    if (it == fam.forward.end())
        internal_error(Stage::Ad, fmt::format("node {} of '{}' used before its forward value exists", n.value,
                                              store_.graph(node.owner).name));
    return it->second;
}

NodeId GradContext::forward_callee(Family& fam, NodeId y) {
    const Node& node = store_.node(y);
    auto p = store_.primitive_of_constant(node.inputs[0]);
    if (!p || *p == Primitive::Dead) return forward_of(fam, node.inputs[0]);
    std::size_t nargs = node.inputs.size() - 1;
    std::optional<Value> baked;
    if (bakes_second_argument(*p) && nargs >= 2 && store_.node(node.inputs[2]).is_constant())
        baked = store_.node(node.inputs[2]).value;
    return store_.constant_graph(primitive_j(*p, nargs, baked));
}

void GradContext::build_forward(Family& fam, const Member& m) {
    GraphId fg = fam.images.at(m.graph);
    Builder f(store_, fg);
    for (NodeId y : m.schedule) {
        const std::vector<NodeId> inputs = store_.node(y).inputs;
        const std::string name = store_.node(y).name;
        const SourceLoc loc = store_.node(y).loc;

        if (store_.primitive_of_constant(inputs[0]) == Primitive::Grad) {
            // grad of a known closed function: its forward value is ▶W.
            GraphId w;
            if (inputs.size() == 2 && store_.graph_of_constant(inputs[1]) &&
                closure_fvs(*store_.graph_of_constant(inputs[1])).empty())
                w = grad_wrapper(*store_.graph_of_constant(inputs[1]));
            else if (inputs.size() == 2 && store_.primitive_of_constant(inputs[1]))
                w = grad_wrapper(primitive_graph(*store_.primitive_of_constant(inputs[1])));
            else
                fail(Stage::Ad, "grad of a function value with free variables inside differentiated code is not supported",
                     loc);
            fam.forward[y] = store_.constant_graph(jtransform(w));
            continue;
        }

        NodeId callee = forward_callee(fam, y);
        std::vector<NodeId> args;
        for (std::size_t i = 1; i < inputs.size(); ++i) args.push_back(forward_of(fam, inputs[i]));
        NodeId t = f.call(callee, std::move(args));
        store_.set_node_loc(t, loc);
        NodeId value = f.item(t, 0);
        NodeId bprop = f.item(t, 1);
        if (!name.empty()) {
            store_.set_node_name(value, name);
            store_.set_node_name(bprop, arrow_name("◀", name));
        }
        fam.forward[y] = value;
        fam.backprop[y] = bprop;
    }
    NodeId ret = forward_of(fam, store_.graph(m.graph).return_node);
    store_.set_return(fg, f.tuple({ret, store_.constant_graph(fam.backward.at(m.graph))}));
}

void GradContext::build_backward(Family& fam, const Member& m) {
    GraphId bg = fam.backward.at(m.graph);
    Builder b(store_, bg);
    NodeId dout = store_.graph(bg).parameters[0];
    const Graph& primal = store_.graph(m.graph);
    const NodeId primal_ret = primal.return_node;
    const std::vector<NodeId> params = primal.parameters;

    auto is_closure = [&](NodeId n) {
        auto h = store_.graph_of_constant(n);
        return h && !closure_fvs(*h).empty();
    };
    // Constants carry no sensitivity, except closures, whose sensitivity
    // env is unpacked into their free variables.
    auto carries_sensitivity = [&](NodeId n) { return !store_.node(n).is_constant() || is_closure(n); };

    struct Entry {
        NodeId node;
        bool closure;
    };
    std::vector<Entry> order;
    std::unordered_set<NodeId> seen_closures;
    auto add_closure = [&](NodeId n) {
        if (is_closure(n) && seen_closures.insert(n).second) order.push_back({n, true});
    };
    for (NodeId y : m.schedule) {
        for (NodeId in : store_.node(y).inputs) add_closure(in);
        order.push_back({y, false});
    }
    add_closure(primal_ret);

    std::unordered_map<NodeId, NodeId> sens;
    auto contribute = [&](NodeId v, NodeId value) {
        if (!carries_sensitivity(v)) return;
        auto [it, fresh] = sens.try_emplace(v, value);
        if (!fresh) it->second = b(Primitive::GAdd, {it->second, value});
    };
    contribute(primal_ret, dout);

    for (auto entry = order.rbegin(); entry != order.rend(); ++entry) {
        auto s = sens.find(entry->node);
        if (s == sens.end()) continue;
        NodeId ds = s->second;
        if (entry->closure) {
            GraphId h = *store_.graph_of_constant(entry->node);
            for (NodeId v : closure_fvs(h)) {
                NodeId like = forward_of(fam, v);
                contribute(v, b(Primitive::EnvGetItem, {ds, store_.constant(Value(env_key(v))), like}));
            }
            continue;
        }
        auto bp = fam.backprop.find(entry->node);
        if (bp == fam.backprop.end()) continue; // grad of a constant function
        const std::vector<NodeId> inputs = store_.node(entry->node).inputs;
        NodeId r = b.call(bp->second, {ds});
        for (std::size_t i = 0; i < inputs.size(); ++i)
            if (carries_sensitivity(inputs[i])) contribute(inputs[i], b.item(r, i));
    }

    NodeId env = b.newenv();
    for (NodeId v : m.free_variables) {
        auto s = sens.find(v);
        if (s != sens.end()) env = b(Primitive::EnvSetItem, {env, store_.constant(Value(env_key(v))), s->second});
    }
    std::vector<NodeId> out{env};
    for (NodeId p : params) {
        auto s = sens.find(p);
        out.push_back(s != sens.end() ? s->second : b.zeros(fam.forward.at(p)));
    }
    store_.set_return(bg, b.tuple(std::move(out)));
}

GraphId GradContext::grad_wrapper(GraphId g, std::size_t wrt) {
    if (auto it = wrappers_.find({g, wrt}); it != wrappers_.end()) return it->second;
    const Graph& src = store_.graph(g);
    std::string name = src.name;
    std::vector<NodeId> src_params = src.parameters;
    if (wrt >= src_params.size())
        fail(Stage::Ad, fmt::format("grad: wrt index {} out of range for '{}' with {} parameter(s)", wrt, name,
                                    src_params.size()));
    GraphId jg = jtransform(g);

    GraphId w = store_.new_graph("grad_" + name);
    store_.add_flags(w, kGradWrapper | kAdGenerated);
    std::vector<NodeId> params;
    for (auto p : src_params) params.push_back(store_.add_parameter(w, store_.node(p).name));
    Builder b(store_, w);
    NodeId t = b.call(store_.constant_graph(jg), params);
    NodeId bprop = b.item(t, 1);
    store_.set_node_name(bprop, arrow_name("◀", name));
    // ∂f/∂f = 1 seeds the backward pass.
    NodeId grads = b.call(bprop, {store_.constant(Value(1.0))});
    store_.set_return(w, b.item(grads, 1 + wrt));
    wrappers_[{g, wrt}] = w;
    wrapper_calls_[w] = t;
    return w;
}

} // namespace gradc
