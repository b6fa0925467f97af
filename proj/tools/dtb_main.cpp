#include "dtb/harness.hpp"

#include <CLI11.hpp>

#include <optional>
#include <string>

int main(int argc, char** argv) {
    CLI::App app{"Tangent-bundle PDE solver suite"};
    app.require_subcommand(1);

    std::string config_path;
    dtb::harness::RunFlags flags;
    std::optional<std::uint64_t> seed;
    bool verify = false;

    CLI::App* run = app.add_subcommand("run", "Run one experiment config");
    run->add_option("config", config_path, "Experiment config (JSON)")->required();
    run->add_option("--scale", flags.scale, "Parameter scale: paper | desk | smoke")
        ->default_val("desk");
    run->add_option("--seed", seed, "Override the config seed");
    run->add_option("--out", flags.out_dir, "Output directory");
    run->add_flag("--check", flags.check, "Enforce the config's acceptance checks (exit 2 on failure)");
    run->add_flag("--deterministic", flags.deterministic,
                  "Deterministic outputs (wall-time columns written as 0)");
    run->add_flag("--verify", verify, "Re-verify artifact digests after the run");

    std::string verify_dir;
    CLI::App* ver = app.add_subcommand("verify", "Check artifact digests against a manifest");
    ver->add_option("dir", verify_dir, "Output directory containing manifest.json")->required();

    CLI11_PARSE(app, argc, argv);

    if (ver->parsed()) return dtb::harness::verify_output_dir(verify_dir);

    flags.seed_override = seed;
    int rc = dtb::harness::run_experiment(config_path, flags);
    if (rc == 0 && verify && !flags.out_dir.empty())
        rc = dtb::harness::verify_output_dir(flags.out_dir);
    return rc;
}
