#pragma once

// Latency-shape measurement: per-block read/write latency across file sizes,
// crypto on/off, cached and uncached, reported as 10% trimmed means and raw
// CSV samples. Timing uses the monotonic nanosecond clock.

#include "cfs/stack.hpp"

#include <numeric>
#include <random>

namespace cfs {

// Mean after discarding the top and bottom deciles.
inline double trimmed_mean(std::vector<double> samples, double trim = 0.10) {
    if (samples.empty()) return 0.0;
    std::sort(samples.begin(), samples.end());
    size_t cut = static_cast<size_t>(samples.size() * trim);
    if (samples.size() - 2 * cut == 0) cut = 0;
    double sum = std::accumulate(samples.begin() + cut, samples.end() - cut, 0.0);
    return sum / static_cast<double>(samples.size() - 2 * cut);
}

struct BenchSample {
    std::string op; // "read" | "write"
    uint64_t size = 0;
    bool crypto = true;
    bool cached = false;
    uint64_t trial = 0;
    double ns_per_block = 0.0;
};

struct BenchCell {
    std::string op;
    uint64_t size = 0;
    bool crypto = true;
    bool cached = false;
    double trimmed_ns_per_block = 0.0;
    double total_ns = 0.0; // trimmed-mean whole-transfer time
    size_t samples = 0;
};

struct BenchReport {
    std::vector<BenchSample> samples;
    std::vector<BenchCell> cells;
};

struct BenchOptions {
    std::vector<uint64_t> sizes; // bytes; default 64KiB..1MiB doublings
    uint64_t trials = 20;
    bool read_op = true;
    bool write_op = true;
    bool crypto_on = true;
    bool crypto_off = true;
    uint32_t block_size = kDefaultBlockSize;

    BenchOptions() {
        for (uint64_t s = 64 * 1024; s <= 1024 * 1024; s *= 2) sizes.push_back(s);
    }
};

namespace detail_bench {

struct SizedRun {
    std::vector<double> write_per_block;   // one sample per trial
    std::vector<double> read_uncached;     // one sample per block per trial
    std::vector<double> read_cached;
    std::vector<double> write_total;
    std::vector<double> read_uncached_total;
    std::vector<double> read_cached_total;
};

inline Bytes random_bytes(std::mt19937_64& rng, size_t n) {
    Bytes out(n);
    for (size_t i = 0; i < n; i += 8) {
        uint64_t v = rng();
        for (size_t j = 0; j < 8 && i + j < n; j++)
            out[i + j] = static_cast<uint8_t>(v >> (8 * j));
    }
    return out;
}

} // namespace detail_bench

// Runs one crypto configuration over all sizes on a fresh in-process stack.
inline Status run_bench_config(const std::filesystem::path& work_dir, bool crypto,
                               const BenchOptions& opt, BenchReport& report) {
    if (opt.trials < 20)
        return Status::err(Errc::bad_request, "bench requires at least 20 trials");

    InitOptions init;
    init.crypto = crypto;
    init.block_size = opt.block_size;
    if (auto st = init_fs(work_dir, init); !st) return st;

    StackOptions so;
    so.redundant_inner_verify = false; // measure the production path
    auto stack_res = InprocStack::boot(work_dir, so);
    if (!stack_res) return Status::err(stack_res.error().code, stack_res.error().message);
    auto stack = stack_res.take();

    ClientSpec spec;
    spec.start_flush_worker = false; // flush timings are taken synchronously
    spec.cache_memory_blocks = 3 * (1024 * 1024 / opt.block_size); // hold a full file
    auto client_res = stack->make_client(spec);
    if (!client_res) return Status::err(client_res.error().code, client_res.error().message);
    Client& client = *client_res.value();

    std::mt19937_64 rng(42);

    // Warm-up outside measurement.
    {
        auto f = client.create(kRootInode, "warmup", NodeKind::file);
        if (!f) return Status::err(f.error().code, f.error().message);
        client.write(f.value(), 0, detail_bench::random_bytes(rng, 4 * opt.block_size));
        client.flush();
        client.read(f.value(), 0, 4 * opt.block_size);
    }

    for (uint64_t size : opt.sizes) {
        uint64_t nblocks = (size + opt.block_size - 1) / opt.block_size;
        detail_bench::SizedRun run;

        for (uint64_t trial = 0; trial < opt.trials; trial++) {
            std::string name = "bench-" + std::to_string(size) + "-" + std::to_string(trial);
            auto created = client.create(kRootInode, name, NodeKind::file);
            if (!created) return Status::err(created.error().code, created.error().message);
            uint64_t file = created.value();
            Bytes content = detail_bench::random_bytes(rng, size);

            if (opt.write_op) {
                uint64_t t0 = mono_nanos();
                client.write(file, 0, content);
                auto fr = client.flush();
                uint64_t t1 = mono_nanos();
                if (!fr.clean) return Status::err(Errc::io, "bench write did not commit");
                run.write_per_block.push_back(double(t1 - t0) / double(nblocks));
                run.write_total.push_back(double(t1 - t0));
            } else {
                client.write(file, 0, content);
                if (!client.flush().clean)
                    return Status::err(Errc::io, "bench write did not commit");
            }

            if (opt.read_op) {
                // Uncached: sequential block fetches straight from the
                // server, bypassing journal and cache.
                auto listed = client.data_hashes_of(file);
                if (!listed) return Status::err(listed.error().code, listed.error().message);
                const std::vector<Digest>& hashes = listed.value();

                uint64_t total0 = mono_nanos();
                for (uint64_t i = 0; i < hashes.size(); i++) {
                    uint64_t t0 = mono_nanos();
                    auto payload = client.fetch_data_block_uncached(hashes[i]);
                    uint64_t t1 = mono_nanos();
                    if (!payload)
                        return Status::err(payload.error().code, payload.error().message);
                    run.read_uncached.push_back(double(t1 - t0));
                }
                run.read_uncached_total.push_back(double(mono_nanos() - total0));

                // Cached: one warming pass, then the measured pass.
                auto warm = client.read(file, 0, size);
                if (!warm) return Status::err(warm.error().code, warm.error().message);
                uint64_t c0 = mono_nanos();
                auto hot = client.read(file, 0, size);
                uint64_t c1 = mono_nanos();
                if (!hot || hot.value() != content)
                    return Status::err(Errc::integrity, "cached read mismatch");
                run.read_cached.push_back(double(c1 - c0) / double(nblocks));
                run.read_cached_total.push_back(double(c1 - c0));
            }
        }

        auto emit = [&](const std::string& op, bool cached, std::vector<double>& per_block,
                        std::vector<double>& totals) {
            if (per_block.empty()) return;
            for (size_t i = 0; i < per_block.size(); i++)
                report.samples.push_back(
                    BenchSample{op, size, crypto, cached, i, per_block[i]});
            BenchCell cell;
            cell.op = op;
            cell.size = size;
            cell.crypto = crypto;
            cell.cached = cached;
            cell.trimmed_ns_per_block = trimmed_mean(per_block);
            cell.total_ns = trimmed_mean(totals);
            cell.samples = per_block.size();
            report.cells.push_back(cell);
        };
        emit("write", false, run.write_per_block, run.write_total);
        emit("read", false, run.read_uncached, run.read_uncached_total);
        emit("read", true, run.read_cached, run.read_cached_total);
    }
    return ok_status();
}

inline Result<BenchReport> run_bench(const std::filesystem::path& base_dir,
                                     const BenchOptions& opt = {}) {
    BenchReport report;
    if (opt.crypto_on) {
        auto st = run_bench_config(base_dir / "crypto-on", true, opt, report);
        if (!st) return Result<BenchReport>::err(st.error().code, st.error().message);
    }
    if (opt.crypto_off) {
        auto st = run_bench_config(base_dir / "crypto-off", false, opt, report);
        if (!st) return Result<BenchReport>::err(st.error().code, st.error().message);
    }
    return report;
}

inline std::string bench_csv(const BenchReport& report) {
    std::string out = "op,size,crypto,cached,trial,ns_per_block\n";
    for (const auto& s : report.samples) {
        out += s.op + "," + std::to_string(s.size) + "," + (s.crypto ? "on" : "off") + "," +
               (s.cached ? "1" : "0") + "," + std::to_string(s.trial) + "," +
               std::to_string(static_cast<uint64_t>(s.ns_per_block)) + "\n";
    }
    return out;
}

inline const BenchCell* find_cell(const BenchReport& r, const std::string& op, uint64_t size,
                                  bool crypto, bool cached) {
    for (const auto& c : r.cells)
        if (c.op == op && c.size == size && c.crypto == crypto && c.cached == cached)
            return &c;
    return nullptr;
}

} // namespace cfs
