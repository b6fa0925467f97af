#pragma once

#include "dtb/common.hpp"

#include <nlohmann/json.hpp>

#include <optional>
#include <string>

namespace dtb::harness {

/// ||u - ref||_2 / ||ref||_2 over the evaluation set; absolute norm when
/// ||ref|| = 0.
double metric_rel_l2(const Vector& u, const Vector& ref);

struct RunFlags {
    std::string scale = "desk";  // paper | desk | smoke
    std::optional<std::uint64_t> seed_override;
    std::string out_dir;  // empty: derived from experiment id + scale
    bool check = false;
    bool deterministic = false;
};

// Exit codes: 0 ok, 1 config error, 2 check failure, 3 numerical failure.
int run_experiment(const std::string& config_path, const RunFlags& flags);

/// Recomputes the digests recorded in `<out_dir>/manifest.json`.
/// Returns 0 when everything matches, 2 otherwise.
int verify_output_dir(const std::string& out_dir);

// Exposed for tests: scale-merged view of a config document.
nlohmann::json merged_config(const nlohmann::json& doc, const std::string& scale);

}  // namespace dtb::harness
