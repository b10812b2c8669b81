#pragma once

#include <memory>
#include <string>

#include "pic/protocol.hpp"

namespace pic {

// On-disk layout of a system state directory:
//   system.json            parameters, config, registered users
//   keys/*.pick            master key and every share
//   db.bin                 encrypted vector store (locator -> PICV)
//   index.picx, index.json merged cluster index (binary + debug dump)
//   envelopes.bin          per-owner sealed dictionaries (advanced scheme)
//   blobs.bin              opaque image blobs
//   clients/<id>/          plaintext mirror (fvecs + manifest) and own index
//   audit.jsonl            append-only trace of this process's run
class SystemStore {
public:
    static void save(System& sys, const std::string& dir);
    static std::unique_ptr<System> load(const std::string& dir);
    static bool exists(const std::string& dir);
    static void append_audit(System& sys, const std::string& dir);
};

// Flat key=value config file (one pair per line, '#' comments).
SystemConfig parse_config_text(const std::string& text);
SystemConfig load_config_file(const std::string& path);
std::string config_to_text(const SystemConfig& cfg);

} // namespace pic
