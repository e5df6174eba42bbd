#include "gradc/infer.hpp"

#include <algorithm>
#include <map>
#include <memory>
#include <tuple>

#include <fmt/core.h>

#include "gradc/ad.hpp"

namespace gradc {

namespace {

constexpr std::size_t kMaxSignatureText = 1 << 16;

struct GraphInfo {
    std::vector<NodeId> schedule;
    std::optional<GraphId> parent;
    bool closed = true;
};

/// One (graph, enclosing context, signature) instance. For closed graphs
/// reached as values, `parent` is the context that produced the value; it
/// only keeps specializations of different creators apart.
struct Context {
    int id = 0;
    GraphId graph;
    Context* parent = nullptr;
    std::vector<AbstractValue> sig;

    std::unordered_map<NodeId, AbstractValue> values;
    AbstractValue result;
    bool has_result = false;
    bool in_progress = false;
    std::size_t round = 0;
    std::unordered_map<NodeId, std::vector<Context*>> targets;
    std::unordered_map<NodeId, FuncRef> grads;

    GraphId spec;
    std::unordered_map<NodeId, NodeId> spec_map;
};

void sig_key(const AbstractValue& a, std::string& out) {
    out += static_cast<char>('A' + static_cast<int>(a.kind));
    if (a.constant) out += "=" + to_string(*a.constant);
    for (auto d : a.shape) out += fmt::format(",{}", d);
    if (!a.items.empty()) {
        out += "(";
        for (const auto& x : a.items) sig_key(x, out);
        out += ")";
    }
    for (const auto& f : a.funcs)
        out += f.prim ? fmt::format("<p{}>", static_cast<int>(*f.prim)) : fmt::format("<g{}@{}>", f.graph.value, f.context);
    out += ";";
}

class Inferrer {
public:
    Inferrer(GraphStore& store, GradContext& ad, InferOptions options) : store_(store), ad_(ad), options_(options) {}

    Specialization run(GraphId root, std::span<const AbstractValue> args) {
        const Graph& g = store_.graph(root);
        if (!info(root).closed) fail(Stage::Infer, fmt::format("'{}' has free variables", g.name));
        if (g.parameters.size() != args.size())
            fail(Stage::Infer, fmt::format("'{}' takes {} argument(s), got {}", g.name, g.parameters.size(), args.size()));
        std::vector<AbstractValue> sig;
        for (const auto& a : args) sig.push_back(broaden(erase_constants(a)));

        Context* rc = nullptr;
        AbstractValue result;
        for (;;) {
            ++round_;
            changed_ = false;
            rc = intern(root, nullptr, sig);
            result = eval(rc);
            if (!changed_) break;
            if (round_ >= options_.max_rounds)
                fail(Stage::Infer, fmt::format("inference did not converge after {} rounds", round_));
        }
        if (result.incomplete())
            fail(Stage::Infer, fmt::format("cannot determine the result type of '{}' (unbounded recursion?)",
                                           store_.graph(root).name));

        Specialization out;
        out.graph = spec(rc);
        out.result = result;
        out.types = std::move(types_);
        out.rounds = round_;
        for (const auto& c : contexts_)
            if (c->round == round_) ++out.contexts;
        return out;
    }

private:
    const GraphInfo& info(GraphId g) {
        auto it = infos_.find(g);
        if (it != infos_.end()) return it->second;
        GraphInfo gi;
        gi.schedule = store_.schedule(g);
        gi.parent = store_.nesting_parent(g);
        gi.closed = store_.free_variables(g).empty();
        return infos_.emplace(g, std::move(gi)).first->second;
    }

    Context* context_by_id(int id) { return id < 0 ? nullptr : contexts_[static_cast<std::size_t>(id)].get(); }

    Context* intern(GraphId g, Context* parent, std::vector<AbstractValue> sig) {
        std::string key;
        for (const auto& a : sig) sig_key(a, key);
        auto k = std::make_tuple(g, parent ? parent->id : -1, std::move(key));
        if (auto it = index_.find(k); it != index_.end()) return it->second;
        // Signatures that double per call exhaust memory long before the count bound.
        if (std::get<2>(k).size() > kMaxSignatureText)
            fail(Stage::Infer, fmt::format("specialization divergence: the signature of '{}' grows without bound",
                                           store_.graph(g).name));
        if (++per_graph_[g] > options_.max_contexts_per_graph)
            fail(Stage::Infer, fmt::format("specialization divergence: '{}' reached more than {} distinct signatures",
                                           store_.graph(g).name, options_.max_contexts_per_graph));
        auto c = std::make_unique<Context>();
        c->id = static_cast<int>(contexts_.size());
        c->graph = g;
        c->parent = parent;
        c->sig = std::move(sig);
        Context* raw = c.get();
        contexts_.push_back(std::move(c));
        index_.emplace(std::move(k), raw);
        by_owner_[{g, parent ? parent->id : -1}].push_back(raw);
        changed_ = true;
        return raw;
    }

    /// Context id to attach to a reference to `h` made from `c`.
    int parent_for(Context* c, GraphId h, bool value_position) {
        const GraphInfo& gi = info(h);
        if (gi.closed) return value_position ? c->id : -1;
        for (Context* x = c; x; x = x->parent)
            if (x->graph == *gi.parent) return x->id;
        internal_error(Stage::Infer, fmt::format("closure '{}' referenced outside its enclosing graph", store_.graph(h).name));
    }

    AbstractValue eval(Context* c) {
        if (c->round == round_ || c->in_progress) return c->has_result ? c->result : AbstractValue::bottom();
        c->in_progress = true;
        c->targets.clear();
        c->grads.clear();
        const Graph& g = store_.graph(c->graph);
        std::string name = g.name;
        std::vector<NodeId> params = g.parameters;
        NodeId ret = g.return_node;
        for (std::size_t i = 0; i < params.size(); ++i) c->values[params[i]] = c->sig[i];
        for (NodeId y : info(c->graph).schedule) {
            try {
                c->values[y] = eval_apply(c, y);
                if (ad_.is_wrapper(c->graph) && *ad_.wrapper_call(c->graph) == y) check_wrapper(c);
            } catch (const Error& e) {
                if (e.internal() || e.message().find(" (in '") != std::string::npos) throw;
                SourceLoc loc = e.loc().known() ? e.loc() : store_.node(y).loc;
                fail(e.stage(), fmt::format("{} (in '{}')", e.message(), name), loc);
            }
        }
        AbstractValue r = value_of(c, ret, false);
        c->in_progress = false;
        c->round = round_;
        if (!c->has_result || !(c->result == r)) changed_ = true;
        c->result = r;
        c->has_result = true;
        return r;
    }

    void check_wrapper(Context* c) {
        auto it = c->values.find(*ad_.wrapper_call(c->graph));
        if (it == c->values.end() || it->second.is_bottom()) return;
        const auto& t = it->second;
        const AbstractValue& out = t.is(AbstractKind::Tuple) && t.items.size() == 2 ? t.items[0] : t;
        if (!out.is(AbstractKind::Float) && !out.is_bottom())
            fail(Stage::Infer, fmt::format("grad requires a function with a scalar f64 result, got {}", to_string(out)));
    }

    AbstractValue value_of(Context* c, NodeId n, bool callee) {
        const Node& node = store_.node(n);
        if (node.is_constant()) {
            if (auto h = store_.graph_of_constant(n))
                return AbstractValue::func({FuncRef::of_graph(*h, parent_for(c, *h, !callee))});
            return abstract_of(node.value);
        }
        GraphId owner = node.owner;
        Context* x = c;
        while (x && x->graph != owner) x = x->parent;
        if (!x) internal_error(Stage::Infer, "free variable outside its context chain");
        auto it = x->values.find(n);
        return it == x->values.end() ? AbstractValue::bottom() : it->second;
    }

    AbstractValue eval_apply(Context* c, NodeId y) {
        std::vector<NodeId> inputs = store_.node(y).inputs;
        AbstractValue f = value_of(c, inputs[0], true);
        std::vector<AbstractValue> args;
        for (std::size_t i = 1; i < inputs.size(); ++i) args.push_back(value_of(c, inputs[i], false));
        if (f.is_bottom()) return f;
        if (!f.is(AbstractKind::Func)) fail(Stage::Infer, fmt::format("value of type {} is not callable", to_string(f)));
        if (f.funcs.empty()) fail(Stage::Infer, "call of a function value of unknown origin");
        AbstractValue result;
        for (const FuncRef& ref : f.funcs) {
            AbstractValue r = call(c, y, ref, args);
            try {
                result = join(result, r);
            } catch (const Error&) {
                fail(Stage::Infer, fmt::format("calls through one function value return different types ({} vs {})",
                                               to_string(result), to_string(r)));
            }
        }
        return result;
    }

    AbstractValue call(Context* c, NodeId y, const FuncRef& ref, const std::vector<AbstractValue>& args) {
        if (ref.prim) {
            if (*ref.prim == Primitive::Grad) return grad_rule(c, y, args);
            return primitive_rule(*ref.prim, args);
        }
        const Graph& h = store_.graph(ref.graph);
        if (h.parameters.size() != args.size())
            fail(Stage::Infer, fmt::format("'{}' takes {} argument(s), got {}", h.name, h.parameters.size(), args.size()));
        std::vector<AbstractValue> sig;
        for (const auto& a : args) {
            if (a.incomplete()) return AbstractValue::bottom();
            sig.push_back(broaden(a));
        }
        Context* k = intern(ref.graph, context_by_id(ref.context), std::move(sig));
        auto& t = c->targets[y];
        if (std::find(t.begin(), t.end(), k) == t.end()) t.push_back(k);
        return eval(k);
    }

    AbstractValue grad_rule(Context* c, NodeId y, const std::vector<AbstractValue>& args) {
        if (args.size() != 1) fail(Stage::Infer, fmt::format("grad takes 1 argument, got {}", args.size()));
        const auto& a = args[0];
        if (a.is_bottom()) return a;
        if (!a.is(AbstractKind::Func) || a.funcs.size() != 1)
            fail(Stage::Infer, fmt::format("grad expects a single known function, got {}",
                                           a.is(AbstractKind::Func) ? "one of several functions" : to_string(a)));
        const FuncRef& ref = *a.funcs.begin();
        GraphId target = ref.prim ? ad_.primitive_graph(*ref.prim) : ref.graph;
        GraphId w = ad_.grad_wrapper(target);
        FuncRef out = FuncRef::of_graph(w, info(w).closed ? c->id : ref.context);
        c->grads[y] = out;
        return AbstractValue::func({out});
    }

    // -----------------------------------------------------------------------
    // emission

    std::vector<Context*> live(GraphId g, int parent) {
        std::vector<Context*> out;
        auto it = by_owner_.find({g, parent});
        if (it == by_owner_.end()) return out;
        for (Context* k : it->second)
            if (k->round == round_) out.push_back(k);
        return out;
    }

    NodeId dead() { return store_.constant_prim(Primitive::Dead); }

    NodeId unique_instance(GraphId g, int parent) {
        auto ks = live(g, parent);
        if (ks.empty()) return dead();
        if (ks.size() > 1)
            fail(Stage::Infer, fmt::format("function '{}' is used as a value at {} different signatures",
                                           store_.graph(g).name, ks.size()));
        return store_.constant_graph(spec(ks.front()));
    }

    NodeId resolve_node(Context* c, NodeId n) {
        const Node& node = store_.node(n);
        if (node.is_constant()) {
            if (auto h = store_.graph_of_constant(n)) return unique_instance(*h, parent_for(c, *h, true));
            return n;
        }
        GraphId owner = node.owner;
        Context* x = c;
        while (x && x->graph != owner) x = x->parent;
        if (!x) internal_error(Stage::Infer, "free variable outside its context chain");
        if (auto it = x->grads.find(n); it != x->grads.end())
            return unique_instance(it->second.graph, it->second.context);
        auto it = x->spec_map.find(n);
        if (it == x->spec_map.end()) internal_error(Stage::Infer, "node referenced before its specialization");
        return it->second;
    }

    NodeId resolve_callee(Context* c, NodeId y, NodeId callee) {
        auto h = store_.graph_of_constant(callee);
        if (!h) return resolve_node(c, callee);
        auto it = c->targets.find(y);
        if (it != c->targets.end())
            for (Context* k : it->second)
                if (k->graph == *h) return store_.constant_graph(spec(k));
        return dead();
    }

    GraphId spec(Context* c) {
        if (c->spec.valid()) return c->spec;
        const GraphInfo& gi = info(c->graph);
        if (c->parent && !gi.closed) spec(c->parent);

        const Graph& src = store_.graph(c->graph);
        std::string name = src.name;
        unsigned flags = src.flags;
        std::vector<NodeId> params = src.parameters;
        NodeId ret = src.return_node;

        GraphId g = store_.new_graph(name);
        store_.add_flags(g, flags | kSpecialized);
        c->spec = g;
        for (NodeId p : params) {
            NodeId q = store_.add_parameter(g, store_.node(p).name);
            c->spec_map[p] = q;
            types_[q] = c->values[p];
        }
        NodeId hole = store_.constant(Value(0.0));
        std::vector<NodeId> body;
        for (NodeId y : gi.schedule) {
            if (c->grads.contains(y)) continue;
            Node node = store_.node(y);
            NodeId z = store_.apply(g, std::vector<NodeId>(node.inputs.size(), hole));
            if (!node.name.empty()) store_.set_node_name(z, node.name);
            if (node.loc.known()) store_.set_node_loc(z, node.loc);
            c->spec_map[y] = z;
            types_[z] = c->values[y];
            body.push_back(y);
        }
        for (NodeId y : body) {
            std::vector<NodeId> inputs = store_.node(y).inputs;
            NodeId z = c->spec_map[y];
            store_.set_input(z, 0, resolve_callee(c, y, inputs[0]));
            for (std::size_t i = 1; i < inputs.size(); ++i) store_.set_input(z, i, resolve_node(c, inputs[i]));
        }
        store_.set_return(g, resolve_node(c, ret));
        return g;
    }

    GraphStore& store_;
    GradContext& ad_;
    InferOptions options_;
    std::vector<std::unique_ptr<Context>> contexts_;
    std::map<std::tuple<GraphId, int, std::string>, Context*> index_;
    std::map<std::pair<GraphId, int>, std::vector<Context*>> by_owner_;
    std::unordered_map<GraphId, std::size_t> per_graph_;
    std::unordered_map<GraphId, GraphInfo> infos_;
    std::size_t round_ = 0;
    bool changed_ = false;
    TypeMap types_;
};

} // namespace

Specialization specialize(GraphStore& store, GradContext& ad, GraphId root, std::span<const AbstractValue> args,
                          InferOptions options) {
    return Inferrer(store, ad, options).run(root, args);
}

std::string signature_text(std::span<const AbstractValue> args) {
    std::string out = "(";
    for (std::size_t i = 0; i < args.size(); ++i) out += (i ? ", " : "") + to_string(args[i]);
    return out + ")";
}

} // namespace gradc
