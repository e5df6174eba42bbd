#include <doctest.h>

#include "gradc/error.hpp"
#include "gradc/fuzz.hpp"
#include "gradc/ir_text.hpp"
#include "gradc/pipeline.hpp"

using namespace gradc;

namespace {

std::string dump(GraphStore& s, GraphId g) {
    GraphId roots[] = {g};
    return dump_text(s, roots);
}

PipelineOptions audited() {
    PipelineOptions o;
    o.audit = true;
    return o;
}

} // namespace

TEST_CASE("the store stays well formed through every stage") {
    for (std::uint64_t seed = 0; seed < 96; ++seed) {
        FuzzProgram fp = generate_program(seed);
        CAPTURE(fp.source);
        Session s(fp.source, audited());
        auto sig = signature_of(fp.args);
        CHECK_NOTHROW(s.compile("f", sig));
        CHECK_NOTHROW(s.compile("f", sig, 1, 0));
        if (seed % 8 == 0) CHECK_NOTHROW(s.compile("f", sig, 2, 0));
        CHECK(s.store().audit().empty());
    }
}

TEST_CASE("every category is generated and differentiates within tolerance") {
    for (FuzzCategory cat : kFuzzCategories) {
        CAPTURE(category_name(cat));
        for (std::uint64_t seed = 0; seed < 10; ++seed) {
            FuzzProgram fp = generate_program(seed, cat);
            CAPTURE(fp.source);
            CHECK(fp.category == cat);
            Session s(fp.source);
            CHECK(gradcheck(s, "f", fp.args, std::nullopt).passed);
        }
    }
}

TEST_CASE("the pipeline is deterministic") {
    for (std::uint64_t seed = 0; seed < 60; ++seed) {
        FuzzProgram fp = generate_program(seed);
        CHECK(generate_program(seed).source == fp.source);
        auto sig = signature_of(fp.args);
        Session a(fp.source), b(fp.source);
        Compiled ca = a.compile("f", sig, 1, 0), cb = b.compile("f", sig, 1, 0);
        CHECK(dump(a.store(), ca.graph) == dump(b.store(), cb.graph));
    }
}

TEST_CASE("optimization is idempotent and dumps round-trip") {
    for (std::uint64_t seed = 0; seed < 80; ++seed) {
        FuzzProgram fp = generate_program(seed);
        CAPTURE(fp.source);
        Session s(fp.source);
        Compiled c = s.compile("f", signature_of(fp.args), 1, 0);
        std::string text = dump(s.store(), c.graph);
        OptStats again = optimize(s.store(), c.graph);
        std::size_t rewrites = 0;
        for (const auto& [rule, n] : again.rules) rewrites += n;
        CHECK(rewrites == 0);
        CHECK(dump(s.store(), c.graph) == text);

        GraphStore copy;
        ParsedModule pm = parse_text(copy, text);
        REQUIRE(!pm.graphs.empty());
        CHECK(dump(copy, pm.graphs[0]) == text);
        CHECK(identical(run(copy, pm.graphs[0], fp.args), s.run(c, fp.args)));
    }
}

TEST_CASE("argument values round-trip through their literal form") {
    for (std::uint64_t seed = 0; seed < 80; ++seed)
        for (const Value& v : generate_program(seed).args) CHECK(identical(parse_value(to_string(v)), v));
}
