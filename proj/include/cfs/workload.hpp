#pragma once

// Declarative workload scripts: create/write/read/verify/chown/unlink ops
// executed against a mounted filesystem, with multi-identity support and
// verified read-back. One line per op; `expect-fail` asserts the rejection
// of the op that follows, wherever in the stack it lands.

#include "cfs/stack.hpp"

#include <functional>
#include <sstream>

namespace cfs {

struct WorkloadResult {
    bool pass = true;
    std::string failure;  // first diverging op
    size_t ops_run = 0;
    double total_ns = 0.0;
};

class WorkloadRunner {
public:
    using ClientFactory =
        std::function<Result<std::unique_ptr<Client>>(const std::string& name)>;
    using PublicKeyLookup = std::function<std::optional<Bytes>(const std::string& name)>;

    WorkloadRunner(ClientFactory factory, PublicKeyLookup keys)
        : factory_(std::move(factory)), keys_(std::move(keys)) {}

    WorkloadResult run(std::istream& script) {
        WorkloadResult result;
        uint64_t t0 = mono_nanos();
        std::string line;
        size_t line_no = 0;
        while (std::getline(script, line)) {
            line_no++;
            std::string trimmed = strip(line);
            if (trimmed.empty() || trimmed[0] == '#') continue;
            result.ops_run++;
            auto st = exec(trimmed);
            if (!st) {
                result.pass = false;
                result.failure = "line " + std::to_string(line_no) + ": " + trimmed + " — " +
                                 st.error().message;
                break;
            }
        }
        result.total_ns = double(mono_nanos() - t0);
        return result;
    }

    Client* active() { return active_; }

    // Single-line entry point; the interactive mount shell feeds this.
    Status run_line(const std::string& line) { return exec(strip(line)); }

private:
    static std::string strip(const std::string& s) {
        size_t a = s.find_first_not_of(" \t\r\n");
        if (a == std::string::npos) return {};
        size_t b = s.find_last_not_of(" \t\r\n");
        return s.substr(a, b - a + 1);
    }

    Status exec(const std::string& line) {
        std::istringstream in(line);
        std::string op;
        in >> op;
        if (op == "expect-fail") {
            std::string rest;
            std::getline(in, rest);
            rest = strip(rest);
            if (rest.empty()) return Status::err(Errc::bad_request, "expect-fail needs an op");
            auto st = exec_op(rest, true);
            if (st) return Status::err(Errc::bad_request, "op unexpectedly succeeded");
            if (st.error().code == Errc::conflict && st.error().message == "expected-failure")
                return ok_status();
            return ok_status(); // any failure satisfies expect-fail
        }
        return exec_op(line, false);
    }

    Status exec_op(const std::string& line, bool expecting_failure) {
        std::istringstream in(line);
        std::string op;
        in >> op;

        if (op == "use") {
            std::string name;
            in >> name;
            return switch_client(name);
        }

        if (auto st = ensure_client(); !st) return st;
        Client& c = *active_;

        if (op == "mkdir" || op == "create") {
            std::string path;
            in >> path;
            auto [parent, name] = split_path(path);
            auto p = c.lookup(parent);
            if (!p) return Status::err(p.error().code, p.error().message);
            auto r = c.create(p.value(), name,
                              op == "mkdir" ? NodeKind::directory : NodeKind::file);
            if (!r) return Status::err(r.error().code, r.error().message);
            return settle(r.value(), expecting_failure);
        }
        if (op == "write") {
            std::string path, data_spec;
            uint64_t offset = 0;
            in >> path >> offset >> data_spec;
            auto data = parse_data(data_spec);
            if (!data) return Status::err(data.error().code, data.error().message);
            auto ino = c.lookup(path);
            if (!ino) return Status::err(ino.error().code, ino.error().message);
            auto r = c.write(ino.value(), offset, data.value());
            if (!r) return Status::err(r.error().code, r.error().message);
            return settle(ino.value(), expecting_failure);
        }
        if (op == "read") {
            std::string path, expect_kw, data_spec;
            uint64_t offset = 0, len = 0;
            in >> path >> offset >> len >> expect_kw >> data_spec;
            auto expected = parse_data(data_spec);
            if (!expected) return Status::err(expected.error().code,
                                              expected.error().message);
            auto ino = c.lookup(path);
            if (!ino) return Status::err(ino.error().code, ino.error().message);
            auto r = c.read(ino.value(), offset, len);
            if (!r) return Status::err(r.error().code, r.error().message);
            if (r.value() != expected.value())
                return Status::err(Errc::integrity, "read-back mismatch at " + path);
            return ok_status();
        }
        if (op == "verify") {
            std::string path, data_spec;
            in >> path >> data_spec;
            auto expected = parse_data(data_spec);
            if (!expected) return Status::err(expected.error().code,
                                              expected.error().message);
            auto ino = c.lookup(path);
            if (!ino) return Status::err(ino.error().code, ino.error().message);
            auto attr = c.getattr(ino.value());
            if (!attr) return Status::err(attr.error().code, attr.error().message);
            if (attr.value().size != expected.value().size())
                return Status::err(Errc::integrity, "size mismatch at " + path);
            auto r = c.read(ino.value(), 0, attr.value().size);
            if (!r) return Status::err(r.error().code, r.error().message);
            if (r.value() != expected.value())
                return Status::err(Errc::integrity, "content mismatch at " + path);
            return ok_status();
        }
        if (op == "owner") {
            std::string path, expect_kw, who;
            in >> path >> expect_kw >> who;
            auto ino = c.lookup(path);
            if (!ino) return Status::err(ino.error().code, ino.error().message);
            auto attr = c.getattr(ino.value());
            if (!attr) return Status::err(attr.error().code, attr.error().message);
            uint32_t want = who == "nobody" ? c.options().nobody_uid
                                            : static_cast<uint32_t>(std::stoul(who));
            if (attr.value().owner_uid != want)
                return Status::err(Errc::integrity,
                                   "owner of " + path + " is " +
                                       std::to_string(attr.value().owner_uid) + ", expected " +
                                       who);
            return ok_status();
        }
        if (op == "acl-add" || op == "acl-del") {
            std::string path, who;
            uint32_t uid = 0;
            in >> path >> who >> uid;
            auto pk = keys_(who);
            if (!pk) return Status::err(Errc::not_found, "unknown client " + who);
            auto ino = c.lookup(path);
            if (!ino) return Status::err(ino.error().code, ino.error().message);
            auto attr = c.getattr(ino.value());
            if (!attr) return Status::err(attr.error().code, attr.error().message);
            auto acl = c.acl_of(ino.value());
            if (!acl) return Status::err(acl.error().code, acl.error().message);
            Acl next = acl.value();
            AclEntry entry{*pk, uid};
            if (op == "acl-add") {
                next.push_back(entry);
            } else {
                next.erase(std::remove(next.begin(), next.end(), entry), next.end());
            }
            auto r = c.set_acl(ino.value(), std::move(next));
            if (!r) return r;
            return settle(ino.value(), expecting_failure);
        }
        if (op == "unlink") {
            std::string path;
            in >> path;
            auto [parent, name] = split_path(path);
            auto p = c.lookup(parent);
            if (!p) return Status::err(p.error().code, p.error().message);
            auto child = c.lookup(path);
            auto r = c.unlink(p.value(), name);
            if (!r) return r;
            return settle(child ? child.value() : 0, expecting_failure);
        }
        if (op == "rename") {
            std::string path, new_path;
            in >> path >> new_path;
            auto ino = c.lookup(path);
            if (!ino) return Status::err(ino.error().code, ino.error().message);
            auto [parent, name] = split_path(new_path);
            auto p = c.lookup(parent);
            if (!p) return Status::err(p.error().code, p.error().message);
            auto r = c.rename(ino.value(), p.value(), name);
            if (!r) return r;
            return settle(ino.value(), expecting_failure);
        }
        if (op == "flush") {
            auto fr = c.flush();
            if (fr.transient_failure)
                return Status::err(Errc::unavailable, "middleware unreachable during flush");
            if (!fr.parked.empty())
                return Status::err(Errc::conflict, "writes were rejected during flush");
            return ok_status();
        }
        return Status::err(Errc::bad_request, "unknown op " + op);
    }

    // Metadata mutations are asynchronous: push them through the middleware
    // so an expected failure surfaces here, then clear the rejected entries.
    Status settle(uint64_t inode, bool expecting_failure) {
        if (!expecting_failure) return ok_status();
        auto fr = active_->flush();
        if (fr.transient_failure)
            return Status::err(Errc::unavailable, "middleware unreachable during flush");
        auto it = fr.parked.find(inode);
        if (it == fr.parked.end())
            return Status::err(Errc::bad_request, "op unexpectedly committed");
        active_->drop_parked(inode);
        return Status::err(Errc::conflict, "expected-failure");
    }

    Status switch_client(const std::string& name) {
        auto it = clients_.find(name);
        if (it == clients_.end()) {
            auto made = factory_(name);
            if (!made) return Status::err(made.error().code, made.error().message);
            it = clients_.emplace(name, made.take()).first;
        }
        active_ = it->second.get();
        return ok_status();
    }

    Status ensure_client() {
        if (active_) return ok_status();
        return switch_client("A");
    }

    static std::pair<std::string, std::string> split_path(const std::string& path) {
        auto slash = path.rfind('/');
        std::string parent = slash == 0 ? "/" : path.substr(0, slash);
        std::string name = path.substr(slash + 1);
        return {parent, name};
    }

    static Result<Bytes> parse_data(const std::string& spec) {
        if (spec.rfind("str:", 0) == 0) return to_bytes(spec.substr(4));
        if (spec.rfind("hex:", 0) == 0) {
            auto b = hex_decode(spec.substr(4));
            if (!b) return Result<Bytes>::err(Errc::bad_request, "bad hex data");
            return *b;
        }
        if (spec.rfind("zeros:", 0) == 0)
            return Bytes(std::stoull(spec.substr(6)), 0);
        if (spec.rfind("rand:", 0) == 0) {
            auto rest = spec.substr(5);
            auto colon = rest.find(':');
            if (colon == std::string::npos)
                return Result<Bytes>::err(Errc::bad_request, "rand needs len:seed");
            size_t len = std::stoull(rest.substr(0, colon));
            uint64_t seed = std::stoull(rest.substr(colon + 1));
            return deterministic_bytes(len, seed);
        }
        if (spec == "empty") return Bytes{};
        return Result<Bytes>::err(Errc::bad_request, "unknown data spec " + spec);
    }

    // Seeded generator shared by scripts and their verifiers.
    static Bytes deterministic_bytes(size_t len, uint64_t seed) {
        Bytes out(len);
        uint64_t x = seed * 6364136223846793005ull + 1442695040888963407ull;
        for (size_t i = 0; i < len; i++) {
            x ^= x << 13;
            x ^= x >> 7;
            x ^= x << 17;
            out[i] = static_cast<uint8_t>(x);
        }
        return out;
    }

    ClientFactory factory_;
    PublicKeyLookup keys_;
    std::map<std::string, std::unique_ptr<Client>> clients_;
    Client* active_ = nullptr;
};

} // namespace cfs
