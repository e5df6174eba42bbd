#include "gradc/fuzz.hpp"

#include <cmath>
#include <random>

#include <fmt/core.h>

namespace gradc {

namespace {

using Vars = std::vector<std::string>;

class Generator {
public:
    explicit Generator(std::uint64_t seed) : rng_(seed) {}

    FuzzProgram program(FuzzCategory c) {
        FuzzProgram p;
        p.category = c;
        switch (c) {
            case FuzzCategory::Arithmetic: arithmetic(p); break;
            case FuzzCategory::Tuples: tuples(p); break;
            case FuzzCategory::Closures: closures(p); break;
            case FuzzCategory::Conditionals: conditionals(p); break;
            case FuzzCategory::Loops: loops(p); break;
            case FuzzCategory::Recursion: recursion(p); break;
            case FuzzCategory::HigherOrder: higher_order(p); break;
            case FuzzCategory::Tensors: tensors(p); break;
        }
        return p;
    }

private:
    int pick(int n) { return std::uniform_int_distribution<int>(0, n - 1)(rng_); }
    bool coin(double p) { return std::uniform_real_distribution<double>(0, 1)(rng_) < p; }
    double real(double lo, double hi) {
        // Two decimals so that arguments print and parse exactly as written.
        double v = std::uniform_real_distribution<double>(lo, hi)(rng_);
        return std::round(v * 100) / 100;
    }
    const std::string& any(const Vars& v) { return v[static_cast<std::size_t>(pick(static_cast<int>(v.size())))]; }

    std::string constant() {
        double v = std::round(std::uniform_real_distribution<double>(-2, 2)(rng_) * 10) / 10;
        if (v == 0) v = 0.5;
        return v < 0 ? fmt::format("({:.1f})", v) : fmt::format("{:.1f}", v);
    }

    std::string leaf(const Vars& vars) { return coin(0.8) ? any(vars) : constant(); }

    /// Smooth float expression over `vars`.
    std::string expr(const Vars& vars, int depth) {
        if (depth <= 0 || coin(0.2)) return leaf(vars);
        auto e = [&] { return expr(vars, depth - 1); };
        switch (pick(11)) {
            case 0:
            case 1: return fmt::format("({} + {})", e(), e());
            case 2: return fmt::format("({} - {})", e(), e());
            case 3:
            case 4: return fmt::format("({} * {})", e(), e());
            case 5: {
                std::string s = e();
                return fmt::format("({} / ({} * {} + 1.0))", e(), s, s);
            }
            case 6: return fmt::format("({} ** 2)", e());
            case 7: return fmt::format("(-{})", e());
            case 8: return fmt::format("exp(0.3 * {})", any(vars));
            case 9: {
                std::string s = e();
                return fmt::format("log({} * {} + 1.0)", s, s);
            }
            default: return fmt::format("({} ** 3)", leaf(vars));
        }
    }

    /// An expression that mentions at least one variable.
    std::string live_expr(const Vars& vars, int depth) {
        return fmt::format("({} + {})", expr(vars, depth), any(vars));
    }

    void scalar_args(FuzzProgram& p, int n, double margin_from_zero = 0) {
        for (int i = 0; i < n; ++i) {
            double v = real(-1.5, 1.5);
            if (margin_from_zero > 0 && std::abs(v) < margin_from_zero) v = v < 0 ? -margin_from_zero - 0.1 : margin_from_zero + 0.1;
            p.args.emplace_back(v);
        }
    }

    // -----------------------------------------------------------------------

    void arithmetic(FuzzProgram& p) {
        Vars vars{"x", "y"};
        std::string body;
        int n = 1 + pick(3);
        for (int i = 0; i < n; ++i) {
            std::string name = fmt::format("a{}", i);
            body += fmt::format("    {} = {}\n", name, live_expr(vars, 3));
            vars.push_back(name);
        }
        p.source = fmt::format("def f(x, y):\n{}    return {}\n", body, live_expr(vars, 2));
        scalar_args(p, 2);
    }

    void tuples(FuzzProgram& p) {
        Vars xy{"x", "y"};
        switch (pick(3)) {
            case 0:
                p.source = fmt::format(
                    "def f(x, y):\n"
                    "    t = ({}, {}, {})\n"
                    "    a = t[0] * t[2] + t[1]\n"
                    "    return a\n",
                    live_expr(xy, 2), live_expr(xy, 2), live_expr(xy, 2));
                break;
            case 1: {
                Vars ab{"a", "b"};
                p.source = fmt::format(
                    "def h(a, b):\n"
                    "    return ({}, {})\n"
                    "def f(x, y):\n"
                    "    p = h(x, y)\n"
                    "    q = h(p[1], x)\n"
                    "    return p[0] * q[1] + q[0]\n",
                    live_expr(ab, 2), live_expr(ab, 2));
                break;
            }
            default:
                p.source = fmt::format(
                    "def f(x, y):\n"
                    "    t = ((x, {}), {})\n"
                    "    u = t[0]\n"
                    "    return u[1] * t[1] + u[0]\n",
                    live_expr(xy, 2), live_expr(xy, 2));
                break;
        }
        scalar_args(p, 2);
    }

    void closures(FuzzProgram& p) {
        Vars xy{"x", "y"};
        switch (pick(3)) {
            case 0:
                p.source = fmt::format(
                    "def f(x, y):\n"
                    "    c = {}\n"
                    "    def g(z):\n"
                    "        return {}\n"
                    "    return g({}) + g(y)\n",
                    live_expr(xy, 2), live_expr({"z", "c", "x"}, 2), live_expr(xy, 1));
                break;
            case 1:
                p.source = fmt::format(
                    "def f(x, y):\n"
                    "    c = {}\n"
                    "    g = lambda z: {}\n"
                    "    return g(g(y)) * c\n",
                    live_expr(xy, 2), live_expr({"z", "x"}, 2));
                break;
            default:
                p.source = fmt::format(
                    "def f(x, y):\n"
                    "    def mk(a):\n"
                    "        return lambda z: {}\n"
                    "    g = mk({})\n"
                    "    return g(y) + g(x)\n",
                    live_expr({"z", "a"}, 2), live_expr(xy, 1));
                break;
        }
        scalar_args(p, 2);
    }

    void conditionals(FuzzProgram& p) {
        Vars xy{"x", "y"};
        switch (pick(3)) {
            case 0:
                p.source = fmt::format(
                    "def f(x, y):\n"
                    "    if x > 0.0:\n"
                    "        a = {}\n"
                    "        return {}\n"
                    "    elif y < 0.0:\n"
                    "        return {}\n"
                    "    else:\n"
                    "        return {}\n",
                    live_expr(xy, 2), live_expr({"x", "y", "a"}, 2), live_expr(xy, 2), live_expr(xy, 2));
                break;
            case 1:
                p.source = fmt::format(
                    "def f(x, y):\n"
                    "    a = {}\n"
                    "    if y < 0.0:\n"
                    "        return {}\n"
                    "    return {}\n",
                    live_expr(xy, 2), live_expr({"x", "y", "a"}, 2), live_expr({"x", "y", "a"}, 2));
                break;
            default:
                p.source = fmt::format(
                    "def h(a, b):\n"
                    "    if b > 0.0:\n"
                    "        return {}\n"
                    "    return {}\n"
                    "def f(x, y):\n"
                    "    return h({}, y) + h(y, x)\n",
                    live_expr({"a", "b"}, 2), live_expr({"a", "b"}, 2), live_expr(xy, 2));
                break;
        }
        scalar_args(p, 2, 0.2);
    }

    void loops(FuzzProgram& p) {
        int n = pick(5);
        if (coin(0.5)) {
            p.source = fmt::format(
                "def f(x, y):\n"
                "    i = 0\n"
                "    acc = {}\n"
                "    while i < {}:\n"
                "        acc = acc * 0.5 + {}\n"
                "        i = i + 1\n"
                "    return acc\n",
                live_expr({"x", "y"}, 2), n, live_expr({"x", "y"}, 1));
        } else {
            p.source = fmt::format(
                "def f(x, y):\n"
                "    k = x\n"
                "    m = y\n"
                "    n = 0\n"
                "    while n < {}:\n"
                "        k = k * 0.8 + m * 0.1\n"
                "        m = {}\n"
                "        n = n + 1\n"
                "    return k * m + {}\n",
                n, live_expr({"m", "x"}, 1), live_expr({"x", "y"}, 1));
        }
        scalar_args(p, 2);
    }

    void recursion(FuzzProgram& p) {
        if (coin(0.5)) {
            p.source = fmt::format(
                "def p(x, n):\n"
                "    if n == 0:\n"
                "        return 1.0\n"
                "    return x * p(x, n - 1)\n"
                "def f(x, y):\n"
                "    return p({}, {}) + y * p(y, {})\n",
                live_expr({"x", "y"}, 1), pick(5), pick(4));
        } else {
            p.source = fmt::format(
                "def s(a, b, n):\n"
                "    if n == 0:\n"
                "        return a\n"
                "    return s(a * 0.5 + {}, b * 0.9, n - 1)\n"
                "def f(x, y):\n"
                "    return s(x, y, {})\n",
                live_expr({"a", "b"}, 1), pick(6));
        }
        scalar_args(p, 2);
    }

    void higher_order(FuzzProgram& p) {
        std::string sq = live_expr({"a"}, 2);
        switch (pick(3)) {
            case 0:
                p.source = fmt::format(
                    "def compose(g, h):\n"
                    "    return lambda z: g(h(z))\n"
                    "def sq(a):\n"
                    "    return {}\n"
                    "def f(x, y):\n"
                    "    k = compose(sq, lambda z: {})\n"
                    "    return k(x) + y\n",
                    sq, live_expr({"z", "y"}, 1));
                break;
            case 1:
                p.source = fmt::format(
                    "def twice(h, z):\n"
                    "    return h(h(z))\n"
                    "def sq(a):\n"
                    "    return {}\n"
                    "def f(x, y):\n"
                    "    return twice(sq, x) * y + twice(lambda w: w * y, x)\n",
                    sq);
                break;
            default:
                p.source = fmt::format(
                    "def map2(h, t):\n"
                    "    return (h(t[0]), h(t[1]))\n"
                    "def sq(a):\n"
                    "    return {}\n"
                    "def f(x, y):\n"
                    "    m = map2(sq, (x, {}))\n"
                    "    return m[0] * m[1]\n",
                    sq, live_expr({"x", "y"}, 1));
                break;
        }
        scalar_args(p, 2);
    }

    Value tensor(std::int64_t rows, std::int64_t cols) {
        std::vector<double> data;
        for (std::int64_t i = 0; i < rows * cols; ++i) data.push_back(real(-1, 1));
        return Value::tensor({rows, cols}, std::move(data));
    }

    void tensors(FuzzProgram& p) {
        std::string s = live_expr({"x"}, 1);
        switch (pick(4)) {
            case 0:
                p.source =
                    "def f(a, b, x):\n"
                    "    c = matmul(a, b)\n"
                    "    return reduce_sum(c * c) * x\n";
                break;
            case 1:
                p.source = fmt::format(
                    "def f(a, b, x):\n"
                    "    s = distribute({}, shape(a))\n"
                    "    e = exp(a * s)\n"
                    "    return reduce_sum(matmul(e, b)) + x\n",
                    s);
                break;
            case 2:
                p.source =
                    "def f(a, b, x):\n"
                    "    t = transpose(a)\n"
                    "    c = matmul(t, transpose(b))\n"
                    "    return reduce_sum(c) * x + reduce_sum(t * t)\n";
                break;
            default:
                p.source = fmt::format(
                    "def f(a, b, x):\n"
                    "    d = distribute({}, shape(a))\n"
                    "    one = distribute(1.0, shape(a))\n"
                    "    return reduce_sum(d * a - log(a * a + one)) + reduce_sum(matmul(a, b))\n",
                    s);
                break;
        }
        p.args.push_back(tensor(2, 3));
        p.args.push_back(tensor(3, 2));
        p.args.emplace_back(real(-1.5, 1.5));
    }

    std::mt19937_64 rng_;
};

} // namespace

std::string_view category_name(FuzzCategory c) {
    switch (c) {
        case FuzzCategory::Arithmetic: return "arithmetic";
        case FuzzCategory::Tuples: return "tuples";
        case FuzzCategory::Closures: return "closures";
        case FuzzCategory::Conditionals: return "conditionals";
        case FuzzCategory::Loops: return "while-loops";
        case FuzzCategory::Recursion: return "recursion";
        case FuzzCategory::HigherOrder: return "higher-order";
        case FuzzCategory::Tensors: return "tensors";
    }
    return "?";
}

FuzzProgram generate_program(std::uint64_t seed) {
    return generate_program(seed, kFuzzCategories[seed % kFuzzCategories.size()]);
}

FuzzProgram generate_program(std::uint64_t seed, FuzzCategory category) {
    FuzzProgram p = Generator(seed).program(category);
    p.seed = seed;
    return p;
}

} // namespace gradc
