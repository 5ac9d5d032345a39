#pragma once

#include <chrono>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <sys/types.h>

namespace seqchess {

class ProcessError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Line-oriented child process over pipes. Single owner, not thread safe.
class ChildProcess {
public:
    ChildProcess(const std::vector<std::string>& argv, const std::map<std::string, std::string>& env = {});
    ~ChildProcess();
    ChildProcess(const ChildProcess&) = delete;
    ChildProcess& operator=(const ChildProcess&) = delete;

    void write_line(std::string_view line);
    /// nullopt on timeout; throws ProcessError once the child closed stdout.
    std::optional<std::string> read_line(std::chrono::milliseconds timeout);

    bool alive();
    void terminate();
    pid_t pid() const { return pid_; }

private:
    void reap(bool block);

    pid_t pid_ = -1;
    int in_fd_ = -1;   // child's stdin
    int out_fd_ = -1;  // child's stdout
    std::string buffer_;
    bool exited_ = false;
    int status_ = 0;
};

/// Splits a command line on whitespace, honouring double quotes.
std::vector<std::string> split_command(std::string_view cmd);

}  // namespace seqchess
