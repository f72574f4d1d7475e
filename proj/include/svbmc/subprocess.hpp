#ifndef SVBMC_SUBPROCESS_HPP
#define SVBMC_SUBPROCESS_HPP

#include <svbmc/targets.hpp>

#include <cerrno>
#include <chrono>
#include <csignal>
#include <cstdio>
#include <poll.h>
#include <sys/types.h>
#include <sys/wait.h>
#include <unistd.h>

namespace svbmc {

/// A child process speaking the line protocol: the parent writes `EVAL x1 ... xD`, the child
/// answers `y` or `y sigma_obs`. `QUIT` ends the child. A timeout or malformed reply is an
/// evaluation failure; after a timeout or crash the child is restarted on the next request.
class ChildProcess {
public:
    ChildProcess(std::string command, double timeout_s, std::string workdir = {})
        : command_(std::move(command)), workdir_(std::move(workdir)), timeout_(timeout_s) {}
    ChildProcess(const ChildProcess&) = delete;
    ChildProcess& operator=(const ChildProcess&) = delete;
    ~ChildProcess() { stop(); }

    Observation eval(const Vector& x) {
        if (pid_ <= 0) start();
        std::string req = "EVAL";
        char buf[40];
        for (Eigen::Index d = 0; d < x.size(); ++d) {
            std::snprintf(buf, sizeof buf, " %.17g", x(d));
            req += buf;
        }
        req += '\n';
        if (!write_all(req)) {
            kill_child();
            throw EvaluationError("target process is not accepting input");
        }
        const std::string line = read_line();
        return parse_reply(line);
    }

    static Observation parse_reply(const std::string& line) {
        std::istringstream in(line);
        Observation o;
        if (!(in >> o.y)) throw EvaluationError("malformed reply from target: '" + line + "'");
        double s = 0.0;
        if (in >> s) {
            if (!(s >= 0.0) || !std::isfinite(s)) throw EvaluationError("invalid sigma_obs in reply: '" + line + "'");
            o.sigma_obs = s;
            o.has_sigma = true;
        } else if (!in.eof()) {
            throw EvaluationError("malformed reply from target: '" + line + "'");
        }
        in >> std::ws;
        if (!in.eof()) throw EvaluationError("malformed reply from target: '" + line + "'");
        if (!std::isfinite(o.y)) throw EvaluationError("non-finite value from target: '" + line + "'");
        return o;
    }

    void stop() {
        if (pid_ <= 0) return;
        write_all("QUIT\n");
        ::close(to_child_);
        // Give the child a moment to exit on its own.
        for (int i = 0; i < 50; ++i) {
            if (::waitpid(pid_, nullptr, WNOHANG) == pid_) {
                cleanup();
                return;
            }
            ::usleep(10000);
        }
        kill_child();
    }

private:
    std::string command_;
    std::string workdir_;
    double timeout_;
    pid_t pid_ = -1;
    int to_child_ = -1, from_child_ = -1;
    std::string pending_;

    void start() {
        int in_pipe[2], out_pipe[2];
        if (::pipe(in_pipe) != 0 || ::pipe(out_pipe) != 0) throw EvaluationError("cannot create pipes for target");
        const pid_t pid = ::fork();
        if (pid < 0) throw EvaluationError("cannot fork target process");
        if (pid == 0) {
            ::dup2(in_pipe[0], STDIN_FILENO);
            ::dup2(out_pipe[1], STDOUT_FILENO);
            ::close(in_pipe[0]);
            ::close(in_pipe[1]);
            ::close(out_pipe[0]);
            ::close(out_pipe[1]);
            if (!workdir_.empty() && ::chdir(workdir_.c_str()) != 0) ::_exit(126);
            ::execl("/bin/sh", "sh", "-c", command_.c_str(), static_cast<char*>(nullptr));
            ::_exit(127);
        }
        ::close(in_pipe[0]);
        ::close(out_pipe[1]);
        pid_ = pid;
        to_child_ = in_pipe[1];
        from_child_ = out_pipe[0];
        pending_.clear();
        std::signal(SIGPIPE, SIG_IGN);
    }

    bool write_all(const std::string& s) {
        std::size_t off = 0;
        while (off < s.size()) {
            const ssize_t n = ::write(to_child_, s.data() + off, s.size() - off);
            if (n < 0 && errno == EINTR) continue;
            if (n <= 0) return false;
            off += static_cast<std::size_t>(n);
        }
        return true;
    }

    std::string read_line() {
        using clock = std::chrono::steady_clock;
        const auto deadline = clock::now() + std::chrono::duration<double>(timeout_);
        for (;;) {
            if (const auto nl = pending_.find('\n'); nl != std::string::npos) {
                std::string line = pending_.substr(0, nl);
                pending_.erase(0, nl + 1);
                if (!line.empty() && line.back() == '\r') line.pop_back();
                return line;
            }
            const double left = std::chrono::duration<double>(deadline - clock::now()).count();
            if (left <= 0.0) {
                kill_child();
                throw EvaluationError("target did not reply within " + std::to_string(timeout_) + " s");
            }
            pollfd pfd{from_child_, POLLIN, 0};
            const int r = ::poll(&pfd, 1, static_cast<int>(std::min(left * 1000.0 + 1.0, 1e9)));
            if (r < 0 && errno == EINTR) continue;
            if (r <= 0) continue;
            char buf[4096];
            const ssize_t n = ::read(from_child_, buf, sizeof buf);
            if (n < 0 && errno == EINTR) continue;
            if (n <= 0) {
                kill_child();
                throw EvaluationError("target process exited");
            }
            pending_.append(buf, static_cast<std::size_t>(n));
        }
    }

    void kill_child() {
        if (pid_ <= 0) return;
        ::kill(pid_, SIGKILL);
        ::waitpid(pid_, nullptr, 0);
        cleanup();
    }

    void cleanup() {
        if (to_child_ >= 0) ::close(to_child_);
        if (from_child_ >= 0) ::close(from_child_);
        to_child_ = from_child_ = -1;
        pid_ = -1;
        pending_.clear();
    }
};

/// Target backed by a child process started in `workdir` (current directory if empty).
/// Evaluations are serialized through one child.
inline Target subprocess_target(const std::string& command, int dim, double timeout_s = 300.0,
                                const std::string& workdir = {}) {
    if (command.empty()) throw ConfigError("subprocess target: empty command");
    if (dim < 1) throw ConfigError("subprocess target: dimension must be given");
    Target t;
    t.name = "subprocess";
    t.dim = dim;
    t.exact = false;
    t.concurrency_safe = false;
    auto child = std::make_shared<ChildProcess>(command, timeout_s, workdir);
    auto mu = std::make_shared<std::mutex>();
    t.eval = [child, mu](const Vector& x) {
        std::lock_guard lock(*mu);
        return child->eval(x);
    };
    return t;
}

} // namespace svbmc

#endif
