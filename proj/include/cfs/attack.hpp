#pragma once

// Executable threat-model scenarios. Each boots a fresh stack, injects the
// attack at its natural point (the client->middleware stream, the server's
// read path, or the key-revocation flow) and checks where the stack rejected
// it.

#include "cfs/stack.hpp"

namespace cfs {

enum class AttackKind { mitm_body, mitm_body_and_sig, dishonest_server, leaked_key };

enum class AttackOutcome {
    rejected_by_middleware,
    rejected_by_client,
    rejected_after_revocation,
    not_rejected,
    infrastructure_error,
};

inline const char* attack_kind_name(AttackKind k) {
    switch (k) {
        case AttackKind::mitm_body: return "mitm_body";
        case AttackKind::mitm_body_and_sig: return "mitm_body_and_sig";
        case AttackKind::dishonest_server: return "dishonest_server";
        case AttackKind::leaked_key: return "leaked_key";
    }
    return "?";
}

inline std::optional<AttackKind> attack_kind_from(std::string_view name) {
    if (name == "mitm_body") return AttackKind::mitm_body;
    if (name == "mitm_body_and_sig") return AttackKind::mitm_body_and_sig;
    if (name == "dishonest_server") return AttackKind::dishonest_server;
    if (name == "leaked_key") return AttackKind::leaked_key;
    return std::nullopt;
}

inline const char* attack_outcome_name(AttackOutcome o) {
    switch (o) {
        case AttackOutcome::rejected_by_middleware: return "rejected_by_middleware";
        case AttackOutcome::rejected_by_client: return "rejected_by_client";
        case AttackOutcome::rejected_after_revocation: return "rejected_after_revocation";
        case AttackOutcome::not_rejected: return "not_rejected";
        case AttackOutcome::infrastructure_error: return "infrastructure_error";
    }
    return "?";
}

inline AttackOutcome expected_outcome(AttackKind k) {
    switch (k) {
        case AttackKind::mitm_body:
        case AttackKind::mitm_body_and_sig: return AttackOutcome::rejected_by_middleware;
        case AttackKind::dishonest_server: return AttackOutcome::rejected_by_client;
        case AttackKind::leaked_key: return AttackOutcome::rejected_after_revocation;
    }
    return AttackOutcome::infrastructure_error;
}

struct AttackReport {
    AttackKind kind;
    AttackOutcome expected;
    AttackOutcome observed = AttackOutcome::infrastructure_error;
    bool pass = false;
    std::string detail;
};

struct AttackOptions {
    bool tcp = false;                   // roles behind loopback TCP instead of in-process
    bool skip_client_sig_verify = false; // harness mutation testing
};

namespace detail_attack {

inline Result<std::unique_ptr<Stack>> boot(const std::filesystem::path& dir,
                                           const AttackOptions& opt) {
    InitOptions init;
    if (auto st = init_fs(dir, init); !st)
        return Result<std::unique_ptr<Stack>>::err(st.error().code, st.error().message);
    StackOptions so;
    so.skip_client_sig_verify = opt.skip_client_sig_verify;
    if (opt.tcp) {
        auto s = TcpStack::boot(dir, so);
        if (!s) return Result<std::unique_ptr<Stack>>::err(s.error().code, s.error().message);
        return std::unique_ptr<Stack>(s.take().release());
    }
    auto s = InprocStack::boot(dir, so);
    if (!s) return Result<std::unique_ptr<Stack>>::err(s.error().code, s.error().message);
    return std::unique_ptr<Stack>(s.take().release());
}

} // namespace detail_attack

inline AttackReport run_attack(AttackKind kind, const std::filesystem::path& work_dir,
                               const AttackOptions& opt = {}) {
    AttackReport report;
    report.kind = kind;
    report.expected = expected_outcome(kind);

    auto booted = detail_attack::boot(work_dir, opt);
    if (!booted) {
        report.detail = booted.error().message;
        return report;
    }
    auto stack = booted.take();

    // A healthy file committed before the attack begins.
    auto victim_client = stack->make_client({});
    if (!victim_client) {
        report.detail = victim_client.error().message;
        return report;
    }
    Client& victim = *victim_client.value();
    auto created = victim.create(kRootInode, "victim.txt", NodeKind::file);
    if (!created) {
        report.detail = created.error().message;
        return report;
    }
    uint64_t file = created.value();
    Bytes content = to_bytes("authentic capsule contents, version one.");
    victim.write(file, 0, content);
    auto flushed = victim.flush();
    if (!flushed.clean) {
        report.detail = "baseline write did not commit";
        return report;
    }

    switch (kind) {
        case AttackKind::mitm_body: {
            // On-path attacker swaps the file data inside the put request but
            // cannot forge the client's signature over it.
            ClientSpec spec;
            spec.name = "A";
            spec.instance = "mitm";
            spec.start_flush_worker = false;
            spec.put_tamper = [](PutRequest& req) {
                if (req.cfs_bytes.size() > 40) req.cfs_bytes[20] ^= 0x5a;
            };
            auto attacked = stack->make_client(spec);
            if (!attacked) {
                report.detail = attacked.error().message;
                return report;
            }
            attacked.value()->write(file, 0, to_bytes("poison"));
            auto fr = attacked.value()->flush();
            auto it = fr.parked.find(file);
            if (it != fr.parked.end() && it->second == PutStatus::bad_signature) {
                report.observed = AttackOutcome::rejected_by_middleware;
                report.detail = "middleware rejected tampered body: bad-signature";
            } else if (fr.clean) {
                report.observed = AttackOutcome::not_rejected;
                report.detail = "tampered put was accepted";
            } else {
                report.detail = "unexpected flush outcome";
            }
            break;
        }
        case AttackKind::mitm_body_and_sig: {
            // Attacker re-signs the substituted body with their own key; the
            // signature verifies but the key is in no ACL.
            KeyPair attacker = KeyPair::generate();
            ClientSpec spec;
            spec.name = "A";
            spec.instance = "mitm-resign";
            spec.start_flush_worker = false;
            spec.put_tamper = [&attacker](PutRequest& req) {
                auto block = CfsBlock::decode_canonical(req.cfs_bytes);
                if (!block) return;
                Identity evil{attacker.public_key, block->author.uid};
                Result<CfsBlock> resigned =
                    block->body_kind == BodyKind::inode
                        ? build_cfs_block(block->inode, evil, attacker)
                        : build_cfs_block(block->data, evil, attacker);
                if (resigned) req.cfs_bytes = resigned.value().canonical_bytes();
            };
            auto attacked = stack->make_client(spec);
            if (!attacked) {
                report.detail = attacked.error().message;
                return report;
            }
            attacked.value()->write(file, 0, to_bytes("poison"));
            auto fr = attacked.value()->flush();
            auto it = fr.parked.find(file);
            if (it != fr.parked.end() && it->second == PutStatus::forbidden) {
                report.observed = AttackOutcome::rejected_by_middleware;
                report.detail = "middleware rejected re-signed body: forbidden";
            } else if (fr.clean) {
                report.observed = AttackOutcome::not_rejected;
                report.detail = "re-signed put was accepted";
            } else {
                report.detail = "unexpected flush outcome";
            }
            break;
        }
        case AttackKind::dishonest_server: {
            // The server substitutes stored file data on reads. Detection
            // must come from the client's digest / proof checks, and the
            // mount must survive.
            auto decoy = victim.create(kRootInode, "decoy.txt", NodeKind::file);
            if (!decoy) {
                report.detail = decoy.error().message;
                return report;
            }
            victim.write(decoy.value(), 0, to_bytes("decoy block, different contents"));
            if (!victim.flush().clean) {
                report.detail = "decoy write did not commit";
                return report;
            }
            auto rec0 = stack->data_store()->record(0);
            auto rec1 = stack->data_store()->record(1);
            if (!rec0 || !rec1) {
                report.detail = "expected two committed data blocks";
                return report;
            }

            ClientSpec spec;
            spec.name = "A";
            spec.instance = "reader";
            spec.start_flush_worker = false;
            auto reader_res = stack->make_client(spec);
            if (!reader_res) {
                report.detail = reader_res.error().message;
                return report;
            }
            Client& reader = *reader_res.value();
            Bytes a = rec0.value().encrypted, b = rec1.value().encrypted;
            stack->data_store()->set_get_tamper([a, b](const Digest&, Bytes& bytes) {
                bytes = (bytes == a) ? b : a; // swap in another block's bytes
            });
            auto r = reader.read(file, 0, content.size());
            stack->data_store()->set_get_tamper(nullptr);
            if (!r && (r.error().code == Errc::integrity ||
                       r.error().code == Errc::decrypt_failure)) {
                // Mount survives: honest reads work again afterwards.
                auto again = reader.read(file, 0, content.size());
                if (again && again.value() == content) {
                    report.observed = AttackOutcome::rejected_by_client;
                    report.detail = "client refused substituted bytes; mount intact";
                } else {
                    report.detail = "client rejected bytes but mount did not recover";
                }
            } else if (r) {
                report.observed = AttackOutcome::not_rejected;
                report.detail = "substituted bytes were accepted";
            } else {
                report.detail = "unexpected read error: " + r.error().message;
            }
            break;
        }
        case AttackKind::leaked_key: {
            // The client key is compromised; the middleware revokes it (and
            // scrubs ACLs). Writes with the leaked key must then fail. The
            // leaked-key holder skips advisory checks: a thief would.
            ClientSpec spec;
            spec.name = "A";
            spec.instance = "leaked";
            spec.advisory_checks = false;
            spec.start_flush_worker = false;
            auto holder_res = stack->make_client(spec);
            if (!holder_res) {
                report.detail = holder_res.error().message;
                return report;
            }
            Client& holder = *holder_res.value();
            auto pre = holder.write(file, 0, to_bytes("pre-revocation write"));
            if (!pre || !holder.flush().clean) {
                report.detail = "pre-revocation write failed";
                return report;
            }
            auto revoked = stack->middleware_service()->revoke(holder.key().key_id);
            if (!revoked) {
                report.detail = revoked.error().message;
                return report;
            }
            holder.write(file, 0, to_bytes("post-revocation write"));
            auto fr = holder.flush();
            auto it = fr.parked.find(file);
            if (it != fr.parked.end() && (it->second == PutStatus::revoked ||
                                          it->second == PutStatus::forbidden)) {
                report.observed = AttackOutcome::rejected_after_revocation;
                report.detail = std::string("middleware rejected write: ") +
                                put_status_name(it->second);
            } else if (fr.clean) {
                report.observed = AttackOutcome::not_rejected;
                report.detail = "post-revocation write was accepted";
            } else {
                report.detail = "unexpected flush outcome";
            }
            break;
        }
    }

    report.pass = report.observed == report.expected;
    return report;
}

inline std::vector<AttackReport> run_all_attacks(const std::filesystem::path& base_dir,
                                                 const AttackOptions& opt = {}) {
    std::vector<AttackReport> out;
    int i = 0;
    for (AttackKind k : {AttackKind::mitm_body, AttackKind::mitm_body_and_sig,
                         AttackKind::dishonest_server, AttackKind::leaked_key}) {
        auto dir = base_dir / ("scenario-" + std::to_string(i++));
        std::filesystem::create_directories(dir);
        out.push_back(run_attack(k, dir, opt));
    }
    return out;
}

} // namespace cfs
