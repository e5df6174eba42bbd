#pragma once

#include <stdexcept>
#include <string>

namespace gradc {

/// Pipeline stage a diagnostic originates from.
enum class Stage { Parse, Lower, Ir, Infer, Ad, Opt, Vm, Cli };

const char* stage_name(Stage stage);

/// Source position attached to surface nodes; line 0 means unknown.
struct SourceLoc {
    int line = 0;
    int column = 0;

    bool known() const { return line > 0; }
};

/// Every user-facing failure of the toolchain. `internal` marks violated
/// invariants (a bug in the toolchain rather than in the input program).
class Error : public std::runtime_error {
public:
    Error(Stage stage, std::string message, SourceLoc loc = {}, bool internal = false);

    Stage stage() const { return stage_; }
    SourceLoc loc() const { return loc_; }
    bool internal() const { return internal_; }
    const std::string& message() const { return message_; }

private:
    Stage stage_;
    SourceLoc loc_;
    bool internal_;
    std::string message_;
};

[[noreturn]] void fail(Stage stage, std::string message, SourceLoc loc = {});
[[noreturn]] void internal_error(Stage stage, std::string message);

} // namespace gradc
