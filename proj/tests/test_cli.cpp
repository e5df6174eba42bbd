#include <doctest.h>

#include <sys/wait.h>
#include <unistd.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

namespace {

struct Outcome {
    int exit = -1;
    std::string out;
    std::string err;
};

std::string program(const char* name) { return std::string(GRADC_TEST_PROGRAMS) + "/" + name; }

std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

/// Runs the gradc binary with `args` (already shell-quoted where needed).
Outcome gradc(const std::string& args) {
    auto err_path = std::filesystem::temp_directory_path() / ("gradc_test_err_" + std::to_string(::getpid()));
    std::string cmd = std::string("'") + GRADC_BINARY + "' " + args + " 2>'" + err_path.string() + "'";
    Outcome o;
    FILE* pipe = ::popen(cmd.c_str(), "r");
    REQUIRE(pipe != nullptr);
    char buf[4096];
    std::size_t n;
    while ((n = std::fread(buf, 1, sizeof buf, pipe)) > 0) o.out.append(buf, n);
    int status = ::pclose(pipe);
    o.exit = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    o.err = slurp(err_path);
    std::filesystem::remove(err_path);
    return o;
}

bool contains(const std::string& s, std::string_view part) { return s.find(part) != std::string::npos; }

} // namespace

TEST_CASE("run and grad print values") {
    auto cube = program("cube.gd");
    Outcome r = gradc("run " + cube + " f 2.0");
    CHECK(r.exit == 0);
    CHECK(r.out == "8.0\n");
    CHECK(gradc("grad " + cube + " f 2.0").out == "12.0\n");
    CHECK(gradc("grad " + cube + " f 2.0 --order 2").out == "12.0\n");
    CHECK(gradc("grad " + cube + " f 2.0 --order 3").out == "6.0\n");
    CHECK(gradc("grad " + program("pow_rec.gd") + " f 2.0").out == "80.0\n");
    Outcome mm = gradc("grad " + program("matmul.gd") + " f 't[2,2](1,2,3,4)' 't[2,2](1,0,0,1)' --wrt 1");
    CHECK(mm.exit == 0);
    CHECK(mm.out == "t[2,2](4,4,6,6)\n");
}

TEST_CASE("user errors exit with 1 and a located diagnostic") {
    Outcome unknown = gradc("run " + program("cube.gd") + " g 2.0");
    CHECK(unknown.exit == 1);
    CHECK(contains(unknown.err, "unknown function"));

    Outcome impure = gradc("run " + program("impure.gd") + " f 1.0 2.0");
    CHECK(impure.exit == 1);
    CHECK(impure.out.empty());
    CHECK(contains(impure.err, "[parse] 2:5: forbidden statement"));
    Outcome index = gradc("run " + program("impure_index.gd") + " f 't[2](1,2)' 3.0");
    CHECK(index.exit == 1);
    CHECK(contains(index.err, "[parse] 2:"));

    Outcome tensor = gradc("run " + program("cube.gd") + " f 't[2](1,2)'");
    CHECK(tensor.exit == 1);
    CHECK(contains(tensor.err, "[infer]"));

    Outcome shape = gradc("run " + program("matmul.gd") + " f 't[2,3](1,2,3,4,5,6)' 't[2,2](1,2,3,4)'");
    CHECK(shape.exit == 1);
    CHECK(contains(shape.err, "matmul"));

    CHECK(gradc("run /nonexistent/file.gd f 1.0").exit == 1);
    CHECK(gradc("grad " + program("cube.gd") + " f 2.0 --wrt 3").exit == 1);
    CHECK(gradc("dump " + program("cube.gd") + " f --stage bogus").exit == 1);
    CHECK(gradc("run " + program("cube.gd") + " f 2.0 --dump-after bogus").exit == 1);
}

TEST_CASE("gradcheck passes and a faulty adjoint fails with 2") {
    Outcome ok = gradc("gradcheck " + program("cube.gd") + " f 2.0");
    CHECK(ok.exit == 0);
    CHECK(contains(ok.out, "PASS"));
    Outcome dot = gradc("gradcheck " + program("dot.gd") + " f 't[3](1,2,3)' 't[3](0.5,-1,2)'");
    CHECK(dot.exit == 0);

    Outcome bad = gradc("gradcheck " + program("cube.gd") + " f 2.0 --fault-adjoint pow");
    CHECK(bad.exit == 2);
    CHECK(contains(bad.out, "FAIL"));
}

TEST_CASE("dump stages") {
    auto cube = program("cube.gd");
    Outcome ast = gradc("dump " + cube + " f --stage ast");
    CHECK(ast.exit == 0);
    CHECK(contains(ast.out, "FunctionDef(\"f\""));
    CHECK(contains(gradc("dump " + cube + " f --stage lowered").out, "pow(%x, 3.0)"));
    CHECK(contains(gradc("dump " + cube + " f --stage ad").out, "▶f"));
    CHECK(contains(gradc("dump " + cube + " f --stage specialized --args-sig f64").out, "pow"));
    Outcome opt = gradc("dump " + cube + " f --stage optimized --args-sig f64");
    CHECK(opt.exit == 0);
    CHECK(contains(opt.out, "mul(%x, %x)"));
    CHECK(gradc("dump " + cube + " f --stage optimized").exit == 1);
}

TEST_CASE("dump-after and opt-trace write to stderr") {
    auto cube = program("cube.gd");
    Outcome trace = gradc("grad " + cube + " f 2.0 --opt-trace");
    CHECK(trace.out == "12.0\n");
    CHECK(contains(trace.err, "RULE inline @%"));
    Outcome after = gradc("grad " + cube + " f 2.0 --dump-after tuple");
    CHECK(after.out == "12.0\n");
    CHECK(contains(after.err, "# after tuple (iteration 1)"));
    Outcome o0 = gradc("grad " + cube + " f 2.0 --opt-level 0 --opt-trace");
    CHECK(o0.out == "12.0\n");
    CHECK(o0.err.empty());
}

TEST_CASE("output is deterministic") {
    std::string cmd = "dump " + program("pow_rec.gd") + " f --stage optimized --args-sig f64";
    Outcome a = gradc(cmd), b = gradc(cmd);
    CHECK(a.exit == 0);
    CHECK(a.out == b.out);
    CHECK(gradc("fuzz --seed 11").out == gradc("fuzz --seed 11").out);
}

TEST_CASE("fuzz prints a program or runs a batch of gradchecks") {
    Outcome one = gradc("fuzz --seed 4");
    CHECK(one.exit == 0);
    CHECK(contains(one.out, "def f("));
    Outcome batch = gradc("fuzz --seed 0 --count 16");
    CHECK(batch.exit == 0);
    CHECK(contains(batch.out, "16 of 16 programs passed"));
}
