#include "seqchess/process.h"

#include <cerrno>
#include <csignal>
#include <cstring>
#include <mutex>

#include <fcntl.h>
#include <poll.h>
#include <spawn.h>
#include <sys/wait.h>
#include <unistd.h>

extern char** environ;

namespace seqchess {

namespace {

void ignore_sigpipe() {
    static std::once_flag once;
    std::call_once(once, [] { std::signal(SIGPIPE, SIG_IGN); });
}

std::string errno_text(const char* what) { return std::string(what) + ": " + std::strerror(errno); }

}  // namespace

ChildProcess::ChildProcess(const std::vector<std::string>& argv, const std::map<std::string, std::string>& env) {
    if (argv.empty()) throw ProcessError("empty command line");
    ignore_sigpipe();

    int to_child[2], from_child[2];
    if (pipe2(to_child, O_CLOEXEC) != 0) throw ProcessError(errno_text("pipe"));
    if (pipe2(from_child, O_CLOEXEC) != 0) {
        close(to_child[0]);
        close(to_child[1]);
        throw ProcessError(errno_text("pipe"));
    }

    posix_spawn_file_actions_t fa;
    posix_spawn_file_actions_init(&fa);
    posix_spawn_file_actions_adddup2(&fa, to_child[0], STDIN_FILENO);
    posix_spawn_file_actions_adddup2(&fa, from_child[1], STDOUT_FILENO);

    std::vector<char*> args;
    for (const auto& a : argv) args.push_back(const_cast<char*>(a.c_str()));
    args.push_back(nullptr);

    std::vector<std::string> env_strings;
    for (char** e = environ; *e; ++e) {
        std::string_view kv(*e);
        const auto eq = kv.find('=');
        if (eq != std::string_view::npos && env.count(std::string(kv.substr(0, eq)))) continue;
        env_strings.emplace_back(kv);
    }
    for (const auto& [k, v] : env) env_strings.push_back(k + "=" + v);
    std::vector<char*> envp;
    for (auto& s : env_strings) envp.push_back(s.data());
    envp.push_back(nullptr);

    const int rc = posix_spawnp(&pid_, args[0], &fa, nullptr, args.data(), envp.data());
    posix_spawn_file_actions_destroy(&fa);
    close(to_child[0]);
    close(from_child[1]);
    if (rc != 0) {
        close(to_child[1]);
        close(from_child[0]);
        throw ProcessError("cannot start '" + argv[0] + "': " + std::strerror(rc));
    }
    in_fd_ = to_child[1];
    out_fd_ = from_child[0];
}

ChildProcess::~ChildProcess() {
    try {
        terminate();
    } catch (...) {
    }
}

void ChildProcess::write_line(std::string_view line) {
    if (in_fd_ < 0) throw ProcessError("process input closed");
    std::string data(line);
    data.push_back('\n');
    std::size_t off = 0;
    while (off < data.size()) {
        const ssize_t n = ::write(in_fd_, data.data() + off, data.size() - off);
        if (n < 0) {
            if (errno == EINTR) continue;
            throw ProcessError(errno_text("write to child"));
        }
        off += static_cast<std::size_t>(n);
    }
}

std::optional<std::string> ChildProcess::read_line(std::chrono::milliseconds timeout) {
    const auto deadline = std::chrono::steady_clock::now() + timeout;
    for (;;) {
        const auto nl = buffer_.find('\n');
        if (nl != std::string::npos) {
            std::string line = buffer_.substr(0, nl);
            buffer_.erase(0, nl + 1);
            if (!line.empty() && line.back() == '\r') line.pop_back();
            return line;
        }
        if (out_fd_ < 0) throw ProcessError("process output closed");
        const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - std::chrono::steady_clock::now());
        if (left.count() <= 0) return std::nullopt;
        pollfd p{out_fd_, POLLIN, 0};
        const int r = poll(&p, 1, static_cast<int>(left.count()));
        if (r < 0) {
            if (errno == EINTR) continue;
            throw ProcessError(errno_text("poll"));
        }
        if (r == 0) return std::nullopt;
        char chunk[4096];
        const ssize_t n = ::read(out_fd_, chunk, sizeof chunk);
        if (n < 0) {
            if (errno == EINTR) continue;
            throw ProcessError(errno_text("read from child"));
        }
        if (n == 0) {
            close(out_fd_);
            out_fd_ = -1;
            throw ProcessError("process exited");
        }
        buffer_.append(chunk, static_cast<std::size_t>(n));
    }
}

void ChildProcess::reap(bool block) {
    if (exited_ || pid_ <= 0) return;
    int st = 0;
    const pid_t r = waitpid(pid_, &st, block ? 0 : WNOHANG);
    if (r == pid_) {
        exited_ = true;
        status_ = st;
    }
}

bool ChildProcess::alive() {
    reap(false);
    return pid_ > 0 && !exited_;
}

void ChildProcess::terminate() {
    if (in_fd_ >= 0) {
        close(in_fd_);
        in_fd_ = -1;
    }
    if (out_fd_ >= 0) {
        close(out_fd_);
        out_fd_ = -1;
    }
    if (pid_ > 0 && !exited_) {
        reap(false);
        if (!exited_) kill(pid_, SIGKILL);
        reap(true);
    }
}

std::vector<std::string> split_command(std::string_view cmd) {
    std::vector<std::string> out;
    std::string cur;
    bool quoted = false, any = false;
    for (char c : cmd) {
        if (c == '"') {
            quoted = !quoted;
            any = true;
        } else if (!quoted && (c == ' ' || c == '\t')) {
            if (any) out.push_back(cur);
            cur.clear();
            any = false;
        } else {
            cur.push_back(c);
            any = true;
        }
    }
    if (quoted) throw std::invalid_argument("unterminated quote in command line");
    if (any) out.push_back(cur);
    return out;
}

}  // namespace seqchess
