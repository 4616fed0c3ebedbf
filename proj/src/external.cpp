#include "pevade/external.hpp"

#include <fcntl.h>
#include <poll.h>
#include <signal.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cerrno>
#include <cstdlib>
#include <cstring>
#include <fstream>

#include <httplib.h>
#include <nlohmann/json.hpp>

namespace pevade::detect {

ExternalDetector ExternalDetector::subprocess(std::vector<std::string> argv, int timeout_ms) {
    if (argv.empty()) throw ExternalProtocol("empty detector command");
    ExternalDetector d;
    d.transport_ = Transport::Subprocess;
    d.argv_ = std::move(argv);
    d.timeout_ms_ = timeout_ms;
    return d;
}

ExternalDetector ExternalDetector::http(std::string url, int timeout_ms) {
    ExternalDetector d;
    d.transport_ = Transport::Http;
    d.url_ = std::move(url);
    d.timeout_ms_ = timeout_ms;
    return d;
}

DetectorScore ExternalDetector::score(const Bytes& file) {
    std::lock_guard<std::mutex> lock(call_mutex_);
    query_counter_.fetch_add(1);
    double m = transport_ == Transport::Subprocess ? score_subprocess(file) : score_http(file);
    if (!(m >= 0.0 && m <= 1.0))
        throw ExternalProtocol("score out of range: " + std::to_string(m));
    return {m, m >= threshold()};
}

namespace {

struct TempFile {
    std::string path;
    TempFile(const Bytes& content) {
        char tmpl[] = "/tmp/pevade_extXXXXXX";
        int fd = mkstemp(tmpl);
        if (fd < 0) throw ExternalProtocol("mkstemp failed");
        path = tmpl;
        std::size_t off = 0;
        while (off < content.size()) {
            ssize_t n = write(fd, content.data() + off, content.size() - off);
            if (n <= 0) {
                close(fd);
                throw ExternalProtocol("temp file write failed");
            }
            off += std::size_t(n);
        }
        close(fd);
    }
    ~TempFile() { unlink(path.c_str()); }
};

}  // namespace

double ExternalDetector::score_subprocess(const Bytes& file) {
    TempFile tmp(file);
    int fds[2];
    if (pipe(fds) != 0) throw ExternalProtocol("pipe failed");

    std::vector<std::string> argv = argv_;
    argv.push_back(tmp.path);
    std::vector<char*> cargv;
    for (auto& a : argv) cargv.push_back(a.data());
    cargv.push_back(nullptr);

    pid_t pid = fork();
    if (pid < 0) {
        close(fds[0]);
        close(fds[1]);
        throw ExternalProtocol("fork failed");
    }
    if (pid == 0) {
        dup2(fds[1], STDOUT_FILENO);
        close(fds[0]);
        close(fds[1]);
        execvp(cargv[0], cargv.data());
        _exit(127);
    }
    close(fds[1]);

    std::string output;
    char buf[256];
    auto deadline_hit = [&]() -> bool {
        // drain stdout under the poll deadline
        int remaining = timeout_ms_;
        for (;;) {
            pollfd pf{fds[0], POLLIN, 0};
            int rc = poll(&pf, 1, remaining);
            if (rc == 0) return true;
            if (rc < 0) {
                if (errno == EINTR) continue;
                return true;
            }
            ssize_t n = read(fds[0], buf, sizeof buf);
            if (n < 0) {
                if (errno == EINTR) continue;
                return true;
            }
            if (n == 0) return false;  // EOF
            output.append(buf, std::size_t(n));
        }
    }();
    close(fds[0]);

    if (deadline_hit) {
        kill(pid, SIGKILL);
        waitpid(pid, nullptr, 0);
        throw ExternalTimeout("detector '" + argv_[0] + "' timed out");
    }
    int status = 0;
    waitpid(pid, &status, 0);
    if (!WIFEXITED(status) || WEXITSTATUS(status) != 0)
        throw ExternalProtocol("detector '" + argv_[0] + "' exited with status " +
                               std::to_string(WIFEXITED(status) ? WEXITSTATUS(status) : -1));

    errno = 0;
    char* end = nullptr;
    double v = std::strtod(output.c_str(), &end);
    if (end == output.c_str() || errno != 0)
        throw ExternalProtocol("unparseable detector reply: '" + output + "'");
    while (*end == '\n' || *end == '\r' || *end == ' ') ++end;
    if (*end != '\0')
        throw ExternalProtocol("trailing garbage in detector reply: '" + output + "'");
    return v;
}

double ExternalDetector::score_http(const Bytes& file) {
    // split scheme://host:port/path
    std::string rest = url_;
    auto scheme = rest.find("://");
    if (scheme != std::string::npos) rest = rest.substr(scheme + 3);
    auto slash = rest.find('/');
    std::string host = slash == std::string::npos ? rest : rest.substr(0, slash);
    std::string path = slash == std::string::npos ? "/" : rest.substr(slash);

    httplib::Client client("http://" + host);
    client.set_connection_timeout(0, timeout_ms_ * 1000LL);
    client.set_read_timeout(0, timeout_ms_ * 1000LL);
    client.set_write_timeout(0, timeout_ms_ * 1000LL);

    auto res = client.Post(path, reinterpret_cast<const char*>(file.data()), file.size(),
                           "application/octet-stream");
    if (!res) {
        auto err = res.error();
        if (err == httplib::Error::ConnectionTimeout || err == httplib::Error::Read ||
            err == httplib::Error::Write)
            throw ExternalTimeout("http detector timed out: " + url_);
        throw ExternalProtocol("http detector unreachable: " + url_);
    }
    if (res->status != 200)
        throw ExternalProtocol("http detector status " + std::to_string(res->status));
    try {
        auto j = nlohmann::json::parse(res->body);
        return j.at("score").get<double>();
    } catch (const nlohmann::json::exception& e) {
        throw ExternalProtocol(std::string("bad http detector reply: ") + e.what());
    }
}

}  // namespace pevade::detect
