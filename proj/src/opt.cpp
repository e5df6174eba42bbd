#include "gradc/opt.hpp"

#include <unordered_set>

#include <fmt/core.h>

#include "gradc/vm.hpp"

namespace gradc {

namespace {

bool is_zero(const Value& v) {
    switch (v.kind()) {
        case ValueKind::Float: return v.as_float() == 0.0;
        case ValueKind::Env: return v.as_env().empty();
        case ValueKind::Tensor:
            for (double x : v.as_tensor().data)
                if (x != 0.0) return false;
            return true;
        case ValueKind::Tuple:
            for (const auto& x : v.as_tuple())
                if (!is_zero(x)) return false;
            return true;
        default: return false;
    }
}

bool is_float(const Value& v, double x) { return v.is(ValueKind::Float) && v.as_float() == x; }

class Optimizer {
public:
    Optimizer(GraphStore& store, GraphId root, TypeMap* types, const OptOptions& options)
        : store_(store), root_(root), types_(types), options_(options) {}

    OptStats run() {
        initial_ = live_graphs();
        auto all = store_.graphs();
        first_new_ = all.empty() ? 0 : all.back().value + 1;
        if (options_.level <= 0) return stats_;
        for (std::size_t it = 1; it <= options_.max_iterations; ++it) {
            stats_.iterations = it;
            std::size_t before = total_;
            if (options_.level >= 2) pass("inline", it, [&](GraphId g) { inline_calls(g); });
            local_pass("tuple", it, &Optimizer::tuple_rules);
            local_pass("fold", it, &Optimizer::fold_rules);
            local_pass("algebraic", it, &Optimizer::algebraic_rules);
            pass("cse", it, [&](GraphId g) { cse(g); });
            dce();
            if (options_.after_pass) options_.after_pass("dce", it);
            if (total_ == before) return stats_;
        }
        fail(Stage::Opt, fmt::format("optimizer did not reach a fixpoint within {} iterations (last rule: {})",
                                     options_.max_iterations, last_rule_));
    }

private:
    // -----------------------------------------------------------------------
    // infrastructure

    std::vector<GraphId> live_graphs() const {
        GraphId roots[] = {root_};
        return store_.reachable_graphs(roots);
    }

    template <class F>
    void pass(std::string_view name, std::size_t it, F body) {
        for (GraphId g : live_graphs())
            if (store_.contains(g)) body(g);
        if (options_.after_pass) options_.after_pass(name, it);
    }

    using Rule = std::optional<NodeId> (Optimizer::*)(NodeId);

    void local_pass(std::string_view name, std::size_t it, Rule rule) {
        pass(name, it, [&](GraphId g) {
            for (NodeId y : store_.schedule(g)) {
                if (!store_.contains(y)) continue;
                if (auto r = (this->*rule)(y)) store_.replace_all_uses(y, *r);
            }
        });
    }

    void fired(const char* rule, NodeId y) {
        ++stats_.rules[rule];
        ++total_;
        last_rule_ = rule;
        if (options_.trace) {
            const auto& name = store_.node(y).name;
            *options_.trace << fmt::format("RULE {} @%{}\n", rule, name.empty() ? std::to_string(y.value) : name);
        }
    }

    void warn(NodeId y, std::string msg) {
        if (!warned_.insert(y).second) return;
        const auto& name = store_.node(y).name;
        stats_.warnings.push_back(fmt::format("%{}: {}", name.empty() ? std::to_string(y.value) : name, msg));
    }

    std::optional<Primitive> prim_call(NodeId y, Primitive p) const {
        const Node& n = store_.node(y);
        if (!n.is_apply()) return std::nullopt;
        auto q = store_.primitive_of_constant(n.inputs[0]);
        if (q != p) return std::nullopt;
        return q;
    }
    bool is_call(NodeId y, Primitive p) const { return prim_call(y, p).has_value(); }

    std::optional<Value> constant_of(NodeId n) const {
        const Node& node = store_.node(n);
        if (!node.is_constant()) return std::nullopt;
        return node.value;
    }

    const AbstractValue* type_of(NodeId n) const {
        if (!types_) return nullptr;
        auto it = types_->find(n);
        return it == types_->end() ? nullptr : &it->second;
    }

    NodeId call(GraphId g, Primitive p, std::vector<NodeId> args) {
        args.insert(args.begin(), store_.constant_prim(p));
        return store_.apply(g, std::move(args));
    }

    // -----------------------------------------------------------------------
    // inlining

    bool recursive(GraphId h) {
        if (auto it = recursive_.find(h); it != recursive_.end()) return it->second;
        auto refs = store_.referenced_graphs(h);
        for (GraphId d : store_.descendants(h)) {
            auto more = store_.referenced_graphs(d);
            refs.insert(refs.end(), more.begin(), more.end());
        }
        bool r = false;
        for (GraphId x : store_.reachable_graphs(refs))
            if (x == h) r = true;
        recursive_[h] = r;
        return r;
    }

    std::size_t size_of(GraphId h) {
        std::size_t n = store_.schedule(h).size();
        for (GraphId d : store_.descendants(h)) n += store_.schedule(d).size();
        return n;
    }

    void inline_calls(GraphId g) {
        recursive_.clear();
        for (NodeId y : store_.schedule(g)) {
            if (!store_.contains(y)) continue;
            auto inputs = store_.node(y).inputs;
            auto h = store_.graph_of_constant(inputs[0]);
            if (!h || *h == g || recursive(*h)) continue;
            if (store_.graph(*h).parameters.size() != inputs.size() - 1) continue;
            std::size_t uses = store_.users(inputs[0]).size();
            if (uses > 1 && size_of(*h) > options_.inline_threshold) continue;
            std::vector<NodeId> args(inputs.begin() + 1, inputs.end());
            CloneMap map;
            NodeId r = clone_body_into(store_, *h, g, args, &map);
            if (types_) {
                for (auto [from, to] : map.nodes)
                    if (auto t = type_of(from)) (*types_)[to] = *t;
            }
            fired("inline", y);
            store_.replace_all_uses(y, r);
        }
    }

    // -----------------------------------------------------------------------
    // local rules

    std::optional<NodeId> tuple_rules(NodeId y) {
        const Node n = store_.node(y);
        if (is_call(y, Primitive::TupleGetItem)) {
            NodeId t = n.inputs[1];
            auto k = constant_of(n.inputs[2]);
            if (!k || !k->is(ValueKind::Int)) return std::nullopt;
            std::size_t i = static_cast<std::size_t>(k->as_int());
            if (is_call(t, Primitive::MakeTuple)) {
                const auto& items = store_.node(t).inputs;
                if (i + 1 >= items.size()) return std::nullopt;
                fired("getitem_make_tuple", y);
                return items[i + 1];
            }
            if (is_call(t, Primitive::TupleSetItem)) {
                const Node s = store_.node(t);
                auto j = constant_of(s.inputs[2]);
                if (!j || !j->is(ValueKind::Int)) return std::nullopt;
                if (j->as_int() == k->as_int()) {
                    fired("getitem_setitem", y);
                    return s.inputs[3];
                }
                fired("getitem_setitem_other", y);
                return call(n.owner, Primitive::TupleGetItem, {s.inputs[1], n.inputs[2]});
            }
            if (auto c = constant_of(t); c && c->is(ValueKind::Tuple) && i < c->as_tuple().size()) {
                fired("getitem_constant", y);
                return store_.constant(c->as_tuple()[i]);
            }
            return std::nullopt;
        }
        if (is_call(y, Primitive::TupleSetItem) && is_call(n.inputs[1], Primitive::MakeTuple)) {
            auto k = constant_of(n.inputs[2]);
            if (!k || !k->is(ValueKind::Int)) return std::nullopt;
            auto items = store_.node(n.inputs[1]).inputs;
            std::size_t i = static_cast<std::size_t>(k->as_int());
            if (i + 1 >= items.size()) return std::nullopt;
            items[i + 1] = n.inputs[3];
            fired("setitem_make_tuple", y);
            return store_.apply(n.owner, std::move(items));
        }
        if (is_call(y, Primitive::EnvGetItem)) {
            NodeId e = n.inputs[1];
            if (is_call(e, Primitive::EnvSetItem)) {
                const Node s = store_.node(e);
                if (s.inputs[2] == n.inputs[2]) {
                    fired("env_getitem_setitem", y);
                    return s.inputs[3];
                }
                auto a = constant_of(s.inputs[2]);
                auto b = constant_of(n.inputs[2]);
                if (a && b && !identical(*a, *b)) {
                    fired("env_getitem_setitem_other", y);
                    return call(n.owner, Primitive::EnvGetItem, {s.inputs[1], n.inputs[2], n.inputs[3]});
                }
                return std::nullopt;
            }
            if (auto c = constant_of(e); c && c->is(ValueKind::Env) && c->as_env().empty()) {
                fired("env_getitem_empty", y);
                return call(n.owner, Primitive::ZerosLike, {n.inputs[3]});
            }
        }
        return std::nullopt;
    }

    std::optional<NodeId> fold_rules(NodeId y) {
        const Node n = store_.node(y);
        auto p = store_.primitive_of_constant(n.inputs[0]);
        if (!p) return std::nullopt;
        if (*p == Primitive::Switch && n.inputs.size() == 4) {
            auto c = constant_of(n.inputs[1]);
            if (!c || !c->is(ValueKind::Bool)) return std::nullopt;
            fired("switch_constant", y);
            return c->as_bool() ? n.inputs[2] : n.inputs[3];
        }
        if (!is_foldable(*p)) return std::nullopt;
        std::vector<Value> args;
        for (std::size_t i = 1; i < n.inputs.size(); ++i) {
            auto c = constant_of(n.inputs[i]);
            if (!c || !is_plain_data(*c)) return std::nullopt;
            args.push_back(*c);
        }
        try {
            Value v = primitive_eval(*p, args);
            if (!is_plain_data(v)) return std::nullopt;
            if (!all_finite(v)) {
                warn(y, fmt::format("not folding {}: the result is not finite", primitive_info(*p).name));
                return std::nullopt;
            }
            fired("fold", y);
            return store_.constant(std::move(v));
        } catch (const Error& e) {
            // Left for the interpreter to report if it is ever reached.
            warn(y, fmt::format("not folding {}: {}", primitive_info(*p).name, e.message()));
            return std::nullopt;
        }
    }

    std::optional<NodeId> algebraic_rules(NodeId y) {
        const Node n = store_.node(y);
        auto p = store_.primitive_of_constant(n.inputs[0]);
        if (!p || !n.is_apply()) return std::nullopt;
        auto arg_const = [&](std::size_t i) { return constant_of(n.inputs[i]); };
        auto rule = [&](const char* name, NodeId r) -> std::optional<NodeId> {
            fired(name, y);
            return r;
        };
        switch (*p) {
            case Primitive::Mul: {
                auto a = arg_const(1), b = arg_const(2);
                if (b && is_float(*b, 1.0)) return rule("mul_one", n.inputs[1]);
                if (a && is_float(*a, 1.0)) return rule("mul_one", n.inputs[2]);
                auto ta = type_of(n.inputs[1]), tb = type_of(n.inputs[2]);
                if (b && is_float(*b, 0.0) && ta && ta->is(AbstractKind::Float)) return rule("mul_zero", n.inputs[2]);
                if (a && is_float(*a, 0.0) && tb && tb->is(AbstractKind::Float)) return rule("mul_zero", n.inputs[1]);
                break;
            }
            case Primitive::Div: {
                auto b = arg_const(2);
                if (b && is_float(*b, 1.0)) return rule("div_one", n.inputs[1]);
                break;
            }
            case Primitive::Add: {
                auto a = arg_const(1), b = arg_const(2);
                if (b && is_float(*b, 0.0)) return rule("add_zero", n.inputs[1]);
                if (a && is_float(*a, 0.0)) return rule("add_zero", n.inputs[2]);
                break;
            }
            case Primitive::Sub: {
                auto b = arg_const(2);
                if (b && is_float(*b, 0.0)) return rule("sub_zero", n.inputs[1]);
                if (auto a = arg_const(1); a && is_float(*a, 0.0))
                    return rule("zero_sub", call(n.owner, Primitive::Neg, {n.inputs[2]}));
                break;
            }
            case Primitive::Pow: {
                auto b = arg_const(2);
                if (b && is_float(*b, 1.0)) return rule("pow_one", n.inputs[1]);
                if (b && is_float(*b, 2.0)) return rule("pow_two", call(n.owner, Primitive::Mul, {n.inputs[1], n.inputs[1]}));
                break;
            }
            case Primitive::Neg:
                if (is_call(n.inputs[1], Primitive::Neg)) return rule("neg_neg", store_.node(n.inputs[1]).inputs[1]);
                break;
            case Primitive::GAdd: {
                auto zero = [&](NodeId x) {
                    if (is_call(x, Primitive::ZerosLike)) return true;
                    auto c = constant_of(x);
                    return c && is_zero(*c);
                };
                if (zero(n.inputs[2])) return rule("gadd_zero", n.inputs[1]);
                if (zero(n.inputs[1])) return rule("gadd_zero", n.inputs[2]);
                break;
            }
            case Primitive::ZerosLike: {
                const AbstractValue* t = type_of(n.inputs[1]);
                if (auto c = arg_const(1); c && is_plain_data(*c)) return rule("zeros_like_constant", store_.constant(zeros_like(*c)));
                if (!t) break;
                if (t->is(AbstractKind::Float)) return rule("zeros_like_typed", store_.constant(Value(0.0)));
                if (t->is(AbstractKind::Func) || t->is(AbstractKind::Env))
                    return rule("zeros_like_typed", store_.constant(Value::env()));
                if (t->is(AbstractKind::Tensor))
                    return rule("zeros_like_typed", store_.constant(Value::tensor(
                                                        t->shape, std::vector<double>(shape_size(t->shape), 0.0))));
                break;
            }
            default: break;
        }
        return std::nullopt;
    }

    // -----------------------------------------------------------------------
    // cse and dce

    void cse(GraphId g) {
        std::map<std::vector<NodeId>, NodeId> seen;
        for (NodeId y : store_.schedule(g)) {
            if (!store_.contains(y)) continue;
            auto inputs = store_.node(y).inputs;
            auto [it, fresh] = seen.emplace(inputs, y);
            if (fresh) continue;
            fired("cse", y);
            store_.replace_all_uses(y, it->second);
        }
    }

    void dce() {
        std::unordered_set<NodeId> marked;
        std::unordered_set<GraphId> live;
        std::vector<NodeId> work;
        auto visit_graph = [&](GraphId g) {
            if (live.insert(g).second) work.push_back(store_.graph(g).return_node);
        };
        visit_graph(root_);
        while (!work.empty()) {
            NodeId n = work.back();
            work.pop_back();
            if (!marked.insert(n).second) continue;
            const Node& node = store_.node(n);
            if (node.is_constant()) {
                if (auto h = store_.graph_of_constant(n)) visit_graph(*h);
                continue;
            }
            // A captured node keeps its owner alive.
            visit_graph(node.owner);
            for (NodeId x : node.inputs) work.push_back(x);
        }

        std::vector<NodeId> doomed;
        std::vector<GraphId> dead_graphs;
        std::vector<GraphId> candidates = initial_;
        for (GraphId g : store_.graphs())
            if (g.value >= first_new_) candidates.push_back(g);
        std::unordered_set<GraphId> seen;
        for (GraphId g : candidates) {
            if (!store_.contains(g) || live.contains(g) || !seen.insert(g).second) continue;
            dead_graphs.push_back(g);
            for (NodeId n : store_.owned_nodes(g)) doomed.push_back(n);
        }
        for (GraphId g : live)
            for (NodeId n : store_.owned_nodes(g))
                if (store_.node(n).is_apply() && !marked.contains(n)) doomed.push_back(n);
        for (GraphId g : live) seen.insert(g);
        // Graphs outside the live set that still use doomed nodes (orphaned
        // closures) go with them.
        std::unordered_set<NodeId> doomed_set(doomed.begin(), doomed.end());
        for (std::size_t i = 0; i < doomed.size(); ++i) {
            for (auto use : store_.users(doomed[i])) {
                if (doomed_set.contains(use.user)) continue;
                GraphId owner = store_.node(use.user).owner;
                if (live.contains(owner) || !seen.insert(owner).second) continue;
                dead_graphs.push_back(owner);
                for (NodeId n : store_.owned_nodes(owner))
                    if (doomed_set.insert(n).second) doomed.push_back(n);
            }
        }
        // Graph constants of removed graphs go too, once nothing uses them.
        for (GraphId g : dead_graphs) {
            NodeId c = store_.constant_graph(g);
            bool unused = true;
            for (auto use : store_.users(c))
                if (!doomed_set.contains(use.user)) unused = false;
            if (unused) doomed.push_back(c);
        }
        if (doomed.empty() && dead_graphs.empty()) return;
        std::size_t applies = 0;
        for (NodeId n : doomed)
            if (store_.node(n).is_apply()) ++applies;
        store_.remove_nodes(doomed, dead_graphs);
        stats_.removed_nodes += applies;
        stats_.removed_graphs += dead_graphs.size();
        stats_.rules["dce"] += applies;
        total_ += doomed.size();
        last_rule_ = "dce";
        initial_ = live_graphs();
    }

    GraphStore& store_;
    GraphId root_;
    TypeMap* types_;
    const OptOptions& options_;
    OptStats stats_;
    std::size_t total_ = 0;
    std::string last_rule_;
    std::unordered_set<NodeId> warned_;
    std::vector<GraphId> initial_;
    std::uint32_t first_new_ = 0;
    std::unordered_map<GraphId, bool> recursive_;
};

} // namespace

OptStats optimize(GraphStore& store, GraphId root, TypeMap* types, const OptOptions& options) {
    return Optimizer(store, root, types, options).run();
}

} // namespace gradc
