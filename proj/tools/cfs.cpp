// CapsuleFS command-line: capsule initialization, the three runtime roles,
// scripted and interactive mounts, attack simulations, latency benchmarks
// and debugging helpers.

#include "cfs/attack.hpp"
#include "cfs/bench.hpp"
#include "cfs/corpus.hpp"
#include "cfs/workload.hpp"

#include <CLI11.hpp>

#include <csignal>
#include <iostream>

namespace {

std::atomic<bool> g_stop{false};

void on_signal(int) { g_stop.store(true); }

void install_signal_handlers() {
    struct sigaction sa {};
    sa.sa_handler = on_signal;
    sigaction(SIGINT, &sa, nullptr);
    sigaction(SIGTERM, &sa, nullptr);
}

void wait_for_stop() {
    while (!g_stop.load()) std::this_thread::sleep_for(std::chrono::milliseconds(100));
}

int fail(const std::string& msg) {
    std::cerr << "cfs: " << msg << "\n";
    return 1;
}

cfs::Status write_port_file(const std::string& path, uint16_t port) {
    if (path.empty()) return cfs::ok_status();
    std::string s = std::to_string(port) + "\n";
    return cfs::detail::write_file_atomic(path,
                                          cfs::ByteSpan((const uint8_t*)s.data(), s.size()));
}

std::filesystem::path fresh_work_dir(const std::string& requested, const char* tag) {
    if (!requested.empty()) return requested;
    auto base = std::filesystem::temp_directory_path() /
                ("cfs-" + std::string(tag) + "-" + std::to_string(::getpid()) + "-" +
                 std::to_string(cfs::mono_nanos() % 1000000));
    std::filesystem::create_directories(base);
    return base;
}

// Parses repeated --client name=keypath:uid flags into mount-config entries.
bool parse_client_flag(const std::string& s, cfs::MountClient& out) {
    auto eq = s.find('=');
    auto colon = s.rfind(':');
    if (eq == std::string::npos || colon == std::string::npos || colon < eq) return false;
    out.name = s.substr(0, eq);
    out.key_path = s.substr(eq + 1, colon - eq - 1);
    out.uid = static_cast<uint32_t>(std::stoul(s.substr(colon + 1)));
    return true;
}

struct MountContext {
    std::unique_ptr<cfs::InprocStack> stack; // set in --inproc mode
    cfs::MountConfig mount;
    bool inproc = false;

    cfs::Result<std::unique_ptr<cfs::Client>> make(const cfs::ClientSpec& spec) {
        if (inproc) return stack->make_client(spec);
        return cfs::connect_client(mount, spec);
    }

    std::optional<cfs::Bytes> public_key_of(const std::string& name) {
        auto try_load = [](const std::string& path) -> std::optional<cfs::Bytes> {
            auto kp = cfs::load_keypair(path);
            if (!kp) return std::nullopt;
            return kp.value().public_key;
        };
        if (name == mount.client.name) return try_load(mount.client.key_path);
        for (const auto& c : mount.extra_clients)
            if (c.name == name) return try_load(c.key_path);
        return std::nullopt;
    }
};

cfs::Result<MountContext> open_mount(const std::string& config_path, bool inproc) {
    MountContext ctx;
    ctx.inproc = inproc;
    auto mnt = cfs::load_config<cfs::MountConfig>(config_path);
    if (!mnt) return cfs::Result<MountContext>::err(mnt.error().code, mnt.error().message);
    ctx.mount = mnt.take();
    if (inproc) {
        auto dir = std::filesystem::path(config_path).parent_path();
        auto stack = cfs::InprocStack::boot(dir, {});
        if (!stack)
            return cfs::Result<MountContext>::err(stack.error().code, stack.error().message);
        ctx.stack = stack.take();
    }
    return ctx;
}

int run_script_lines(cfs::WorkloadRunner& runner, std::istream& in, bool json) {
    auto result = runner.run(in);
    if (json) {
        cfs::json j{{"pass", result.pass},
                    {"ops", result.ops_run},
                    {"total_ns", result.total_ns},
                    {"failure", result.failure}};
        std::cout << j.dump(2) << "\n";
    } else if (result.pass) {
        std::cout << "workload: pass (" << result.ops_run << " ops, "
                  << result.total_ns / 1e6 << " ms)\n";
    } else {
        std::cout << "workload: FAIL at " << result.failure << "\n";
    }
    return result.pass ? 0 : 1;
}

void mount_shell(cfs::WorkloadRunner& runner, const std::string& mountpoint) {
    std::cout << "cfs shell on " << mountpoint
              << " — workload ops plus ls/stat/cat; 'quit' to exit\n";
    std::string line;
    while (std::cout << "cfs> " << std::flush, std::getline(std::cin, line)) {
        std::istringstream in(line);
        std::string op, path;
        in >> op;
        if (op.empty()) continue;
        if (op == "quit" || op == "exit") break;
        if (op == "ls" || op == "stat" || op == "cat") {
            in >> path;
            if (path.empty()) path = "/";
            auto st = runner.run_line("use A");
            (void)st;
            cfs::Client* c = runner.active();
            if (!c) {
                std::cout << "no client\n";
                continue;
            }
            auto ino = c->lookup(path);
            if (!ino) {
                std::cout << "error: " << ino.error().message << "\n";
                continue;
            }
            if (op == "ls") {
                auto entries = c->readdir(ino.value());
                if (!entries) {
                    std::cout << "error: " << entries.error().message << "\n";
                    continue;
                }
                for (const auto& e : entries.value())
                    std::cout << (e.kind == cfs::NodeKind::directory ? "d " : "f ") << e.name
                              << "\n";
            } else if (op == "stat") {
                auto a = c->getattr(ino.value());
                if (!a) {
                    std::cout << "error: " << a.error().message << "\n";
                    continue;
                }
                std::cout << "inode " << a.value().inode << " size " << a.value().size
                          << " kind "
                          << (a.value().kind == cfs::NodeKind::directory ? "dir" : "file")
                          << " owner " << a.value().owner_uid << " mtime_us "
                          << a.value().mtime_us << "\n";
            } else {
                auto a = c->getattr(ino.value());
                if (!a) {
                    std::cout << "error: " << a.error().message << "\n";
                    continue;
                }
                auto r = c->read(ino.value(), 0, a.value().size);
                if (!r) {
                    std::cout << "error: " << r.error().message << "\n";
                    continue;
                }
                std::cout << cfs::to_string(r.value()) << "\n";
            }
            continue;
        }
        auto st = runner.run_line(line);
        if (!st)
            std::cout << "error: " << st.error().message << "\n";
        else
            std::cout << "ok\n";
    }
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"CapsuleFS: a multi-credential filesystem over tamper-evident capsules"};
    app.require_subcommand(1);
    install_signal_handlers();

    // ------------------------------------------------------------- init
    auto* init = app.add_subcommand("init", "initialize capsules, keys and configs");
    std::string init_dir;
    cfs::InitOptions init_opt;
    bool init_no_crypto = false;
    init->add_option("--dir", init_dir, "filesystem directory")->required();
    init->add_option("--block-size", init_opt.block_size, "data block size (bytes)");
    init->add_option("--uid", init_opt.owner_uid, "uid recorded for the initial client");
    init->add_flag("--no-crypto", init_no_crypto, "disable signatures and encryption");
    init->add_flag("--force", init_opt.force, "replace an existing filesystem");

    // ---------------------------------------------------- serve-capsule
    auto* serve = app.add_subcommand("serve-capsule", "run a capsule storage server");
    std::string serve_config, serve_listen, serve_port_file;
    serve->add_option("--config", serve_config, "server config file")->required();
    serve->add_option("--listen", serve_listen, "listen address (host:port)");
    serve->add_option("--port-file", serve_port_file, "write the bound port here");

    // ------------------------------------------------------- middleware
    auto* mw_cmd = app.add_subcommand("middleware", "run the trusted write middleware");
    std::string mw_config, mw_listen, mw_port_file, mw_inode_addr, mw_data_addr;
    bool mw_skip_sig = false;
    mw_cmd->add_option("--config", mw_config, "middleware config file")->required();
    mw_cmd->add_option("--listen", mw_listen, "listen address (host:port)");
    mw_cmd->add_option("--port-file", mw_port_file, "write the bound port here");
    mw_cmd->add_option("--inode-addr", mw_inode_addr, "inode capsule server address");
    mw_cmd->add_option("--data-addr", mw_data_addr, "data capsule server address");
    mw_cmd->add_flag("--insecure-skip-client-sig", mw_skip_sig,
                     "skip client signature verification (harness mutation testing)");

    // ------------------------------------------------------------ mount
    auto* mount_cmd = app.add_subcommand("mount", "mount the filesystem");
    std::string mount_config, mountpoint = "/", mount_ops;
    bool mount_no_shell = false, mount_inproc = false, mount_json = false;
    int64_t mount_snapshot = -1;
    mount_cmd->add_option("--config", mount_config, "mount config file")->required();
    mount_cmd->add_option("mountpoint", mountpoint, "mount point label");
    mount_cmd->add_option("--snapshot", mount_snapshot, "read-only view at this timestamp");
    mount_cmd->add_flag("--no-mount-shell", mount_no_shell,
                        "run scripted ops from --ops instead of the shell");
    mount_cmd->add_option("--ops", mount_ops, "ops script file (with --no-mount-shell)");
    mount_cmd->add_flag("--inproc", mount_inproc, "run server+middleware in this process");
    mount_cmd->add_flag("--json", mount_json, "machine-readable result");

    // --------------------------------------------------------- snapshot
    auto* snap_cmd = app.add_subcommand("snapshot", "read-only point-in-time view");
    std::string snap_config, snap_ops;
    bool snap_inproc = false;
    uint64_t snap_ts = 0;
    snap_cmd->add_option("--config", snap_config, "mount config file")->required();
    snap_cmd->add_option("--ts", snap_ts, "timestamp bound (microseconds)")->required();
    snap_cmd->add_option("--ops", snap_ops, "read-only ops script");
    snap_cmd->add_flag("--inproc", snap_inproc, "run server in this process");

    // ------------------------------------------------------- attack-sim
    auto* attack_cmd = app.add_subcommand("attack-sim", "threat-model simulations");
    std::string attack_kind = "all", attack_transport = "inproc", attack_dir;
    bool attack_json = false, attack_skip_sig = false;
    attack_cmd->add_option("kind", attack_kind,
                           "mitm_body | mitm_body_and_sig | dishonest_server | leaked_key | all");
    attack_cmd->add_option("--transport", attack_transport, "inproc | tcp");
    attack_cmd->add_option("--work-dir", attack_dir, "scratch directory");
    attack_cmd->add_flag("--json", attack_json, "machine-readable verdicts");
    attack_cmd->add_flag("--insecure-skip-client-sig", attack_skip_sig,
                         "disable signature verification (mutation-tests the harness)");

    // ------------------------------------------------------------ bench
    auto* bench_cmd = app.add_subcommand("bench", "per-block latency benchmark");
    std::string bench_out, bench_dir, bench_crypto = "both", bench_op = "both";
    uint64_t bench_trials = 20;
    bool bench_json = false;
    bench_cmd->add_option("--trials", bench_trials, "trials per size (min 20)");
    bench_cmd->add_option("--crypto", bench_crypto, "on | off | both");
    bench_cmd->add_option("--op", bench_op, "read | write | both");
    bench_cmd->add_option("--out", bench_out, "CSV output path");
    bench_cmd->add_option("--work-dir", bench_dir, "scratch directory");
    bench_cmd->add_flag("--json", bench_json, "machine-readable summary");

    // --------------------------------------------------------- workload
    auto* wl_cmd = app.add_subcommand("workload", "run a declarative op script");
    std::string wl_script, wl_config;
    std::vector<std::string> wl_clients;
    bool wl_inproc = false, wl_json = false;
    int64_t wl_crash_after = -1;
    wl_cmd->add_option("script", wl_script, "workload script file")->required();
    wl_cmd->add_option("--config", wl_config, "mount config file")->required();
    wl_cmd->add_option("--client", wl_clients, "extra identity: name=keypath:uid");
    wl_cmd->add_flag("--inproc", wl_inproc, "run server+middleware in this process");
    wl_cmd->add_flag("--json", wl_json, "machine-readable result");
    wl_cmd->add_option("--crash-after-puts", wl_crash_after,
                       "kill the process before put N+1 (crash-recovery harness)");

    // ---------------------------------------------------------- journal
    auto* journal_cmd = app.add_subcommand("journal", "journal debugging");
    auto* journal_inspect = journal_cmd->add_subcommand("inspect", "print live entries");
    std::string journal_dir;
    journal_inspect->add_option("dir", journal_dir, "journal directory")->required();

    // ------------------------------------------------------ codec-corpus
    auto* corpus_cmd =
        app.add_subcommand("codec-corpus", "deterministic encode/sign corpus runs");
    uint64_t corpus_seed = 1;
    uint64_t corpus_count = 500;
    std::string corpus_out, corpus_verify;
    corpus_cmd->add_option("--seed", corpus_seed, "corpus RNG seed");
    corpus_cmd->add_option("--count", corpus_count, "number of blocks");
    corpus_cmd->add_option("--out", corpus_out, "write corpus file");
    corpus_cmd->add_option("--verify", corpus_verify, "verify an existing corpus file");

    CLI11_PARSE(app, argc, argv);

    // =================================================================
    if (*init) {
        init_opt.crypto = !init_no_crypto;
        auto st = cfs::init_fs(init_dir, init_opt);
        if (!st) return fail(st.error().message);
        std::cout << "initialized " << init_dir << " (block_size=" << init_opt.block_size
                  << ", crypto=" << (init_opt.crypto ? "on" : "off") << ")\n";
        return 0;
    }

    if (*serve) {
        auto cfg_res = cfs::load_config<cfs::ServerConfig>(serve_config);
        if (!cfg_res) return fail(cfg_res.error().message);
        auto cfg = cfg_res.take();
        if (!serve_listen.empty()) cfg.listen = serve_listen;

        auto rk = cfs::load_read_key(cfg.capsule.read_key_path);
        if (!rk) return fail(rk.error().message);
        cfs::CapsuleOptions copt;
        copt.crypto = cfg.crypto;
        copt.durable = cfg.durable;
        copt.redundant_inner_verify = cfg.redundant_inner_verify;
        auto store = cfs::CapsuleStore::open(cfg.capsule.store_path, cfs::CapsuleMeta{},
                                             rk.take(), copt);
        if (!store) return fail(store.error().message);

        bool follower = !cfg.follower_of.empty();
        cfs::CapsuleServerHost host(follower);
        host.add_store(store.value());
        auto addr = cfs::net::Address::parse(cfg.listen);
        if (!addr) return fail("bad listen address " + cfg.listen);
        if (auto st = host.listen(*addr); !st) return fail(st.error().message);
        if (auto st = write_port_file(serve_port_file, host.port()); !st)
            return fail(st.error().message);
        std::cout << "capsule " << cfg.capsule.label << " serving on " << addr->host << ":"
                  << host.port() << (follower ? " (follower)" : "") << "\n";

        std::unique_ptr<cfs::FollowerSync> sync;
        if (follower) {
            auto leader_addr = cfs::net::Address::parse(cfg.follower_of);
            if (!leader_addr) return fail("bad leader address " + cfg.follower_of);
            auto leader = std::make_shared<cfs::RemoteCapsule>(
                *leader_addr, store.value()->capsule_id(), store.value()->block_size());
            sync = std::make_unique<cfs::FollowerSync>(store.value(), leader);
            if (auto st = sync->start(); !st) return fail(st.error().message);
        }
        wait_for_stop();
        if (sync) sync->stop();
        host.stop();
        return 0;
    }

    if (*mw_cmd) {
        auto cfg_res = cfs::load_config<cfs::MiddlewareConfig>(mw_config);
        if (!cfg_res) return fail(cfg_res.error().message);
        auto cfg = cfg_res.take();
        if (!mw_listen.empty()) cfg.listen = mw_listen;
        if (!mw_inode_addr.empty()) cfg.inode.address = mw_inode_addr;
        if (!mw_data_addr.empty()) cfg.data.address = mw_data_addr;

        auto inode_addr = cfs::net::Address::parse(cfg.inode.address);
        auto data_addr = cfs::net::Address::parse(cfg.data.address);
        if (!inode_addr || !data_addr)
            return fail("capsule server addresses required (config or flags)");

        auto inode_wk = cfs::load_write_key(cfg.inode_write_key_path);
        if (!inode_wk) return fail(inode_wk.error().message);
        auto data_wk = cfs::load_write_key(cfg.data_write_key_path);
        if (!data_wk) return fail(data_wk.error().message);
        auto admin = cfs::load_keypair(cfg.admin_key_path);
        if (!admin) return fail(admin.error().message);

        auto inode_svc = std::make_shared<cfs::RemoteCapsule>(
            *inode_addr, cfg.inode.capsule_id(), cfg.inode.block_size);
        auto data_svc = std::make_shared<cfs::RemoteCapsule>(
            *data_addr, cfg.data.capsule_id(), cfg.data.block_size);

        cfs::MiddlewareOptions mo;
        mo.crypto = cfg.crypto;
        mo.scrub_on_revoke = cfg.scrub_on_revoke;
        mo.skip_client_sig_verify = mw_skip_sig;
        mo.revocation_path = cfg.revocation_path;
        auto mw = std::make_shared<cfs::Middleware>(inode_wk.take(), data_wk.take(),
                                                    inode_svc, data_svc, admin.take(), mo);
        mw->start_sync();

        cfs::MiddlewareHost host(mw);
        auto addr = cfs::net::Address::parse(cfg.listen);
        if (!addr) return fail("bad listen address " + cfg.listen);
        if (auto st = host.listen(*addr); !st) return fail(st.error().message);
        if (auto st = write_port_file(mw_port_file, host.port()); !st)
            return fail(st.error().message);
        std::cout << "middleware on " << addr->host << ":" << host.port() << "\n";
        wait_for_stop();
        host.stop();
        mw->stop();
        return 0;
    }

    if (*mount_cmd || *snap_cmd) {
        bool is_snapshot = static_cast<bool>(*snap_cmd);
        std::string cfg_path = is_snapshot ? snap_config : mount_config;
        bool inproc = is_snapshot ? snap_inproc : mount_inproc;
        auto ctx_res = open_mount(cfg_path, inproc);
        if (!ctx_res) return fail(ctx_res.error().message);
        auto ctx = std::make_shared<MountContext>(std::move(ctx_res.value()));

        std::optional<uint64_t> snapshot_ts;
        if (is_snapshot) snapshot_ts = snap_ts;
        else if (mount_snapshot >= 0) snapshot_ts = static_cast<uint64_t>(mount_snapshot);

        cfs::WorkloadRunner runner(
            [ctx, snapshot_ts](const std::string& name) {
                cfs::ClientSpec spec;
                spec.name = name;
                spec.snapshot_ts = snapshot_ts;
                return ctx->make(spec);
            },
            [ctx](const std::string& name) { return ctx->public_key_of(name); });

        if (is_snapshot && snap_ops.empty()) {
            // Print the tree at the bound and exit.
            if (auto st = runner.run_line("use A"); !st) return fail(st.error().message);
            cfs::Client* c = runner.active();
            std::function<void(uint64_t, const std::string&)> walk =
                [&](uint64_t ino, const std::string& prefix) {
                    auto entries = c->readdir(ino);
                    if (!entries) return;
                    for (const auto& e : entries.value()) {
                        std::cout << prefix << "/" << e.name
                                  << (e.kind == cfs::NodeKind::directory ? "/" : "") << "\n";
                        if (e.kind == cfs::NodeKind::directory)
                            walk(e.inode, prefix + "/" + e.name);
                    }
                };
            std::cout << "snapshot at ts=" << snap_ts << ":\n/\n";
            walk(cfs::kRootInode, "");
            return 0;
        }

        std::string ops = is_snapshot ? snap_ops : mount_ops;
        if (is_snapshot || mount_no_shell) {
            if (ops.empty()) return run_script_lines(runner, std::cin, mount_json);
            std::ifstream f(ops);
            if (!f) return fail("cannot open ops file " + ops);
            return run_script_lines(runner, f, mount_json);
        }
        mount_shell(runner, mountpoint);
        return 0;
    }

    if (*attack_cmd) {
        cfs::AttackOptions opt;
        opt.tcp = attack_transport == "tcp";
        opt.skip_client_sig_verify = attack_skip_sig;
        auto dir = fresh_work_dir(attack_dir, "attack");

        std::vector<cfs::AttackReport> reports;
        if (attack_kind == "all") {
            reports = cfs::run_all_attacks(dir, opt);
        } else {
            auto kind = cfs::attack_kind_from(attack_kind);
            if (!kind) return fail("unknown attack kind " + attack_kind);
            reports.push_back(cfs::run_attack(*kind, dir, opt));
        }

        bool all_pass = true;
        cfs::json out = cfs::json::array();
        for (const auto& r : reports) {
            all_pass = all_pass && r.pass;
            if (attack_json) {
                out.push_back({{"scenario", cfs::attack_kind_name(r.kind)},
                               {"expected", cfs::attack_outcome_name(r.expected)},
                               {"observed", cfs::attack_outcome_name(r.observed)},
                               {"pass", r.pass},
                               {"detail", r.detail}});
            } else {
                std::cout << (r.pass ? "[PASS] " : "[FAIL] ") << cfs::attack_kind_name(r.kind)
                          << ": expected " << cfs::attack_outcome_name(r.expected)
                          << ", observed " << cfs::attack_outcome_name(r.observed) << " — "
                          << r.detail << "\n";
            }
        }
        if (attack_json) std::cout << out.dump(2) << "\n";
        return all_pass ? 0 : 1;
    }

    if (*bench_cmd) {
        cfs::BenchOptions opt;
        opt.trials = bench_trials;
        opt.crypto_on = bench_crypto != "off";
        opt.crypto_off = bench_crypto != "on";
        opt.read_op = bench_op != "write";
        opt.write_op = bench_op != "read";
        auto dir = fresh_work_dir(bench_dir, "bench");
        auto report = cfs::run_bench(dir, opt);
        if (!report) return fail(report.error().message);

        if (!bench_out.empty()) {
            auto csv = cfs::bench_csv(report.value());
            auto st = cfs::detail::write_file_atomic(
                bench_out, cfs::ByteSpan((const uint8_t*)csv.data(), csv.size()));
            if (!st) return fail(st.error().message);
        }
        if (bench_json) {
            cfs::json cells = cfs::json::array();
            for (const auto& c : report.value().cells)
                cells.push_back({{"op", c.op},
                                 {"size", c.size},
                                 {"crypto", c.crypto ? "on" : "off"},
                                 {"cached", c.cached},
                                 {"trimmed_ns_per_block", c.trimmed_ns_per_block},
                                 {"total_ns", c.total_ns},
                                 {"samples", c.samples}});
            std::cout << cells.dump(2) << "\n";
        } else {
            std::printf("%-6s %9s %7s %7s %16s %14s\n", "op", "size", "crypto", "cached",
                        "ns/block(10%tm)", "total ms");
            for (const auto& c : report.value().cells)
                std::printf("%-6s %9llu %7s %7s %16.0f %14.2f\n", c.op.c_str(),
                            static_cast<unsigned long long>(c.size), c.crypto ? "on" : "off",
                            c.cached ? "yes" : "no", c.trimmed_ns_per_block,
                            c.total_ns / 1e6);
        }
        return 0;
    }

    if (*wl_cmd) {
        auto ctx_res = open_mount(wl_config, wl_inproc);
        if (!ctx_res) return fail(ctx_res.error().message);
        auto ctx = std::make_shared<MountContext>(std::move(ctx_res.value()));
        for (const auto& s : wl_clients) {
            cfs::MountClient mc;
            if (!parse_client_flag(s, mc)) return fail("bad --client " + s);
            ctx->mount.extra_clients.push_back(mc);
            if (ctx->stack) {
                // In-process stacks read identities from the loaded config.
                auto mnt = ctx->stack->mount_config();
                (void)mnt;
            }
        }
        int64_t crash_after = wl_crash_after;

        cfs::WorkloadRunner runner(
            [ctx, crash_after](const std::string& name)
                -> cfs::Result<std::unique_ptr<cfs::Client>> {
                cfs::ClientSpec spec;
                spec.name = name;
                auto made = ctx->inproc
                                ? ctx->stack->make_client(spec)
                                : cfs::connect_client(ctx->mount, spec);
                if (made && crash_after >= 0) {
                    made.value()->set_put_hook([crash_after](uint64_t done) {
                        if (static_cast<int64_t>(done) >= crash_after) {
                            std::fflush(nullptr);
                            ::_exit(137);
                        }
                    });
                }
                return made;
            },
            [ctx](const std::string& name) { return ctx->public_key_of(name); });

        std::ifstream f(wl_script);
        if (!f) return fail("cannot open script " + wl_script);
        return run_script_lines(runner, f, wl_json);
    }

    if (*journal_inspect) {
        cfs::Journal j(journal_dir);
        auto entries = j.live_entries();
        std::printf("%-6s %-20s %-11s %-10s %-10s %s\n", "seq", "inode", "block", "op",
                    "state", "digest");
        for (const auto& e : entries) {
            const char* state = e.state == cfs::EntryState::pending     ? "pending"
                                : e.state == cfs::EntryState::committed ? "committed"
                                : e.state == cfs::EntryState::parked    ? "parked"
                                                                        : "superseded";
            const char* op = e.op == cfs::OpKind::data     ? "data"
                             : e.op == cfs::OpKind::create ? "create"
                             : e.op == cfs::OpKind::write  ? "write"
                             : e.op == cfs::OpKind::unlink ? "unlink"
                             : e.op == cfs::OpKind::set_acl ? "set_acl"
                                                            : "rename";
            std::string block = e.block_index == cfs::kInodeEntry
                                    ? "inode"
                                    : std::to_string(e.block_index);
            std::printf("%-6llu %-20llu %-11s %-10s %-10s %s\n",
                        static_cast<unsigned long long>(e.sequence),
                        static_cast<unsigned long long>(e.inode), block.c_str(), op, state,
                        (e.final_digest ? e.final_digest->hex() : e.placeholder.hex()).c_str());
        }
        std::cout << entries.size() << " live entries\n";
        return 0;
    }

    if (*corpus_cmd) {
        if (!corpus_verify.empty()) {
            auto data = cfs::detail::read_file(corpus_verify);
            if (!data) return fail(data.error().message);
            auto items = cfs::decode_corpus(data.value());
            if (!items) return fail("corrupt corpus file");
            auto verified = cfs::verify_corpus(*items);
            if (!verified) return fail(verified.error().message);
            std::cout << "verified " << verified.value() << " corpus items\n";
            return 0;
        }
        auto items = cfs::generate_corpus(corpus_seed, corpus_count);
        auto encoded = cfs::encode_corpus(items);
        if (corpus_out.empty()) {
            std::cout << cfs::sha256(encoded).hex() << "  (" << items.size() << " items)\n";
            return 0;
        }
        auto st = cfs::detail::write_file_atomic(corpus_out, encoded);
        if (!st) return fail(st.error().message);
        std::cout << "wrote " << items.size() << " items to " << corpus_out << "\n";
        return 0;
    }

    return 0;
}
