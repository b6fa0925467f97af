#include "dtb/harness.hpp"

#include "dtb/approx.hpp"
#include "dtb/evolve.hpp"
#include "dtb/netfam.hpp"
#include "dtb/oracle.hpp"
#include "dtb/targets.hpp"
#include "dtb/wflow.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>
#include <map>

namespace dtb::harness {

namespace fs = std::filesystem;
using nlohmann::json;

double metric_rel_l2(const Vector& u, const Vector& ref) {
    if (u.size() != ref.size()) fail(Errc::dimension_mismatch, "metric shapes differ");
    const double rn = ref.norm();
    const double dn = (u - ref).norm();
    return rn > 0.0 ? dn / rn : dn;
}

namespace {

std::string fmt_num(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

/// Collects artifacts as they are written so the manifest can list them with
/// content digests.
class Workspace {
public:
    Workspace(fs::path dir, bool deterministic) : dir_(std::move(dir)), deterministic_(deterministic) {
        fs::create_directories(dir_);
    }

    const fs::path& dir() const { return dir_; }
    bool deterministic() const { return deterministic_; }

    std::ofstream open_csv(const std::string& name) {
        artifacts_.push_back(name);
        return std::ofstream(dir_ / name);
    }

    void note_artifact(const std::string& name) { artifacts_.push_back(name); }

    void metric(const std::string& key, double value) { metrics_[key] = value; }
    const std::map<std::string, double>& metrics() const { return metrics_; }

    void write_manifest(const json& config_echo, double wall_ms, const json& extra) {
        json man;
        man["config"] = config_echo;
        man["wall_ms"] = wall_ms;
        if (!extra.is_null()) man["extra"] = extra;
        json ms = json::object();
        for (const auto& [k, v] : metrics_) ms[k] = v;
        man["metrics"] = ms;
        json arts = json::array();
        for (const auto& name : artifacts_) {
            const fs::path p = dir_ / name;
            std::ifstream in(p, std::ios::binary);
            std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
            arts.push_back({{"path", name},
                            {"bytes", bytes.size()},
                            {"fnv64", to_hex(fnv1a(bytes.data(), bytes.size()))}});
        }
        man["artifacts"] = std::move(arts);
        std::ofstream out(dir_ / "manifest.json");
        out << man.dump(2) << "\n";
    }

private:
    fs::path dir_;
    bool deterministic_;
    std::vector<std::string> artifacts_;
    std::map<std::string, double> metrics_;
};

// ---------------------------------------------------------------------------
// config helpers

[[noreturn]] void config_fail(const std::string& what) { fail(Errc::config_error, what); }

const json& need(const json& j, const char* key) {
    auto it = j.find(key);
    if (it == j.end()) config_fail(std::string("missing config field: ") + key);
    return *it;
}

void deep_merge(json& base, const json& over) {
    if (!over.is_object() || !base.is_object()) {
        base = over;
        return;
    }
    for (auto it = over.begin(); it != over.end(); ++it) {
        if (base.contains(it.key()) && base[it.key()].is_object() && it->is_object())
            deep_merge(base[it.key()], *it);
        else
            base[it.key()] = *it;
    }
}

netfam::NetworkSpec parse_network(const json& j) {
    netfam::NetworkSpec spec;
    const std::string family = need(j, "family").get<std::string>();
    if (family == "mlp") spec.family = netfam::Family::mlp;
    else if (family == "periodic_mlp") spec.family = netfam::Family::periodic_mlp;
    else if (family == "residual") spec.family = netfam::Family::residual;
    else if (family == "mmnn_lite") spec.family = netfam::Family::mmnn_lite;
    else config_fail("unknown network family: " + family);
    spec.input_dim = need(j, "input_dim").get<int>();
    spec.output_dim = j.value("output_dim", 1);
    spec.widths = need(j, "widths").get<std::vector<int>>();
    const std::string act = j.value("activation", std::string("tanh"));
    if (act == "tanh") spec.activation = netfam::Activation::tanh_fn;
    else if (act == "sin") spec.activation = netfam::Activation::sin_fn;
    else if (act == "relu_smooth") spec.activation = netfam::Activation::relu_smooth;
    else config_fail("unknown activation: " + act);
    spec.last_layer_bias = j.value("last_layer_bias", false);
    spec.mmnn_rank = j.value("mmnn_rank", 16);
    if (j.contains("embedding")) {
        netfam::PeriodicEmbeddingSpec emb;
        emb.per_dim_features = j["embedding"].value("per_dim_features", 40);
        emb.max_frequency = j["embedding"].value("max_frequency", 1);
        spec.embedding = emb;
    }
    try {
        netfam::validate(spec);
    } catch (const Error& e) {
        config_fail(std::string("invalid network spec: ") + e.what());
    }
    return spec;
}

SamplerSpec parse_sampler(const json& j, int dim) {
    SamplerSpec s;
    const std::string kind = j.value("kind", std::string("uniform_box"));
    if (kind == "uniform_box") s.kind = SamplerSpec::Kind::uniform_box;
    else if (kind == "gaussian") s.kind = SamplerSpec::Kind::gaussian;
    else if (kind == "grid") s.kind = SamplerSpec::Kind::grid;
    else config_fail("unknown sampler kind: " + kind);
    s.dim = dim;
    s.count = need(j, "count").get<int>();
    if (s.count < 1) config_fail("sampler count must be >= 1");
    s.scale = j.value("scale", 1.0);
    if (j.contains("mean")) {
        auto m = j["mean"].get<std::vector<double>>();
        if (static_cast<int>(m.size()) != dim) config_fail("sampler mean has wrong dimension");
        s.mean = Eigen::Map<Eigen::RowVectorXd>(m.data(), dim);
    }
    return s;
}

FieldPtr parse_initial(const std::string& name, int dim) {
    if (name == "heat2d") {
        if (dim != 2) config_fail("heat2d initial condition is 2-D");
        return targets::heat_initial_2d();
    }
    if (name == "sine") return targets::sine_eigen(dim, 0);
    if (name == "w5") {
        if (dim != 5) config_fail("w5 initial condition is 5-D");
        return targets::w5_field();
    }
    config_fail("unknown initial condition: " + name);
}

struct CheckResult {
    std::string description;
    bool pass;
};

std::vector<CheckResult> evaluate_checks(const json& cfg, const std::map<std::string, double>& metrics) {
    std::vector<CheckResult> results;
    if (!cfg.contains("checks")) return results;
    for (const auto& c : cfg["checks"]) {
        const std::string metric = need(c, "metric").get<std::string>();
        auto it = metrics.find(metric);
        if (it == metrics.end()) {
            results.push_back({metric + " (missing)", false});
            continue;
        }
        bool ok = std::isfinite(it->second);
        std::string desc = metric + "=" + fmt_num(it->second);
        if (c.contains("max")) {
            ok = ok && it->second <= c["max"].get<double>();
            desc += " <= " + fmt_num(c["max"].get<double>());
        }
        if (c.contains("min")) {
            ok = ok && it->second >= c["min"].get<double>();
            desc += " >= " + fmt_num(c["min"].get<double>());
        }
        results.push_back({desc, ok});
    }
    return results;
}

// ---------------------------------------------------------------------------
// shared emission

void write_report_csv(Workspace& ws, const evolve::RunReport& report) {
    std::ofstream out = ws.open_csv("report.csv");
    out << "k,t,residual_rel,alpha_l2,rel_L2_vs_ref,wall_ms\n";
    for (std::size_t k = 0; k < report.times.size(); ++k) {
        out << k + 1 << "," << fmt_num(report.times[k]) << "," << fmt_num(report.residual_rel[k])
            << "," << fmt_num(report.alpha_l2[k]) << ",";
        if (std::isfinite(report.rel_l2[k])) out << fmt_num(report.rel_l2[k]);
        out << "," << fmt_num(ws.deterministic() ? 0.0 : report.wall_ms[k]) << "\n";
    }
}

void append_snapshot(std::ofstream& out, const std::string& grid_id, double t, const Vector& vals) {
    for (Eigen::Index i = 0; i < vals.size(); ++i)
        out << grid_id << "," << fmt_num(t) << "," << fmt_num(vals(i)) << "\n";
}

std::vector<double> snapshot_times_from(const json& out_cfg, double T) {
    std::vector<double> snaps;
    if (out_cfg.contains("snapshots")) snaps = out_cfg["snapshots"].get<std::vector<double>>();
    if (snaps.empty() || std::abs(snaps.back() - T) > 1e-12) snaps.push_back(T);
    return snaps;
}

netfam::ParamsPtr pretrained_theta(const json& cfg, const netfam::NetworkSpec& spec,
                                   std::uint64_t seed, Workspace& ws) {
    netfam::ParamVec theta0 = netfam::init_params(spec, derive_seed(seed, "init"));
    if (!cfg.contains("pretrain")) return std::make_shared<netfam::ParamVec>(std::move(theta0));
    const json& p = cfg["pretrain"];
    const std::string target_name = p.value("target", std::string("w5"));
    netfam::SampledFunction target = targets::field_values(parse_initial(target_name, spec.input_dim));
    netfam::RefitOptions opts;
    opts.batch = p.value("batch", 256);
    netfam::RefitResult rr = netfam::refit(spec, theta0, target, p.value("iters", 1000),
                                           p.value("step", 1e-3), derive_seed(seed, "pretrain"), opts);
    ws.metric("pretrain_loss_before", rr.loss_before);
    ws.metric("pretrain_loss_after", rr.loss_after);
    netfam::save_checkpoint((ws.dir() / "theta_pretrained.json").string(), spec, rr.theta);
    ws.note_artifact("theta_pretrained.json");
    return std::make_shared<netfam::ParamVec>(std::move(rr.theta));
}

// ---------------------------------------------------------------------------
// experiment runners

void run_heat(const json& cfg, Workspace& ws, std::uint64_t seed, bool trapezoidal) {
    const json& integ = need(cfg, "integrator");
    const json& pde = need(cfg, "pde");
    netfam::NetworkSpec spec = parse_network(need(cfg, "network"));
    SamplerSpec sampler = parse_sampler(need(cfg, "sampler"), spec.input_dim);

    const double T = need(integ, "T").get<double>();
    const int K = need(integ, "K").get<int>();
    if (K < 1) config_fail("integrator.K must be >= 1");
    if (!(T > 0)) config_fail("integrator.T must be positive");
    const int l = need(integ, "l").get<int>();
    const double nu = need(pde, "nu").get<double>();
    const std::string initial_name = need(pde, "initial").get<std::string>();
    FieldPtr phi = parse_initial(initial_name, spec.input_dim);

    evolve::EvolveOptions opts;
    opts.lstsq.rcond = integ.value("rcond", 1e-6);
    opts.proj_tol = integ.value("proj_tol", 5e-2);
    opts.seed = seed;

    auto theta = std::make_shared<netfam::ParamVec>(netfam::init_params(spec, derive_seed(seed, "init")));

    DtbSet set(1.0, phi, spec);
    evolve::RunReport report;
    if (trapezoidal) {
        std::tie(set, report) = evolve::trapezoidal_heat_run(spec, theta, nu, phi, T, K, sampler, l, opts);
    } else {
        evolve::UpdatePolicy policy;  // fixed basis for the linear problem
        std::tie(set, report) =
            evolve::forward_euler_run(spec, theta, evolve::RhsOperator::heat(nu), phi, T, K, sampler,
                                      l, policy, opts);
    }

    // Reference on the comparison grid: analytic eigenfunction for the sine
    // start, self-converged spectral run otherwise.
    const json out_cfg = cfg.value("output", json::object());
    const std::vector<double> snaps = snapshot_times_from(out_cfg, T);
    const int modes = out_cfg.value("grid_modes", 64);
    oracle::SpectralGrid grid{spec.input_dim, modes};
    Matrix grid_pts = grid.points();

    std::vector<std::pair<double, Vector>> reference;
    if (initial_name == "sine") {
        Vector base = phi->values(grid_pts);
        for (double t : snaps) reference.emplace_back(t, std::exp(-nu * M_PI * M_PI * t) * base);
    } else {
        const int osteps = out_cfg.value("oracle_steps", 2000);
        oracle::SpectralRun ref = oracle::self_converged_reference(
            grid, nu, oracle::SpectralNonlinearity::none, *phi, T, osteps, snaps,
            oracle::SpectralRule::strang_exact, 1e-6, (ws.dir() / "cache").string(), initial_name);
        for (std::size_t s = 0; s < ref.times.size(); ++s)
            reference.emplace_back(ref.times[s], ref.fields[s]);
    }
    auto find_reference = [&](double t) -> const Vector* {
        for (const auto& [rt, field] : reference)
            if (std::abs(rt - t) < 1e-6) return &field;
        return nullptr;
    };

    std::ofstream snap_csv = ws.open_csv("snapshots.csv");
    snap_csv << "grid_id,t,value\n";
    double rel_final = std::numeric_limits<double>::quiet_NaN();
    double rel_max = 0.0;
    for (double t : snaps) {
        const int k = static_cast<int>(std::llround(t / (T / K)));
        DtbSet probe_set(set.h(), phi, spec);
        for (int i = 0; i < k && i < static_cast<int>(set.steps().size()); ++i)
            probe_set.push(set.steps()[i]);
        Vector dtb_vals = probe_set.eval(grid_pts, false).value;
        append_snapshot(snap_csv, "dtb", t, dtb_vals);
        if (const Vector* refv = find_reference(t)) {
            append_snapshot(snap_csv, "ref", t, *refv);
            const double rel = metric_rel_l2(dtb_vals, *refv);
            rel_max = std::max(rel_max, rel);
            if (std::abs(t - T) < 1e-12) rel_final = rel;
            std::size_t row = static_cast<std::size_t>(k) - 1;
            if (row < report.rel_l2.size()) report.rel_l2[row] = rel;
        }
    }
    write_report_csv(ws, report);
    set.save((ws.dir() / "dtbset").string());
    ws.note_artifact("dtbset/steps.jsonl");

    ws.metric("rel_l2_final", rel_final);
    ws.metric("rel_l2_max", rel_max);
    ws.metric("residual_max",
              *std::max_element(report.residual_rel.begin(), report.residual_rel.end()));
}

void run_ac2d(const json& cfg, Workspace& ws, std::uint64_t seed) {
    const json& integ = need(cfg, "integrator");
    const json& pde = need(cfg, "pde");
    netfam::NetworkSpec spec = parse_network(need(cfg, "network"));
    SamplerSpec sampler = parse_sampler(need(cfg, "sampler"), spec.input_dim);

    const double T = need(integ, "T").get<double>();
    const int K = need(integ, "K").get<int>();
    if (K < 1) config_fail("integrator.K must be >= 1");
    const int l1 = need(integ, "l").get<int>();
    const int l2 = integ.value("l2", l1);
    const double nu = pde.value("nu", 0.005);
    FieldPtr phi = parse_initial(need(pde, "initial").get<std::string>(), spec.input_dim);

    evolve::EvolveOptions opts;
    opts.lstsq.rcond = integ.value("rcond", 1e-6);
    opts.seed = seed;

    auto theta = std::make_shared<netfam::ParamVec>(netfam::init_params(spec, derive_seed(seed, "init")));
    auto [set, report] = evolve::ac2d_corrected_run(spec, theta, evolve::RhsOperator::allen_cahn(nu),
                                                phi, T, K, sampler, l1, l2, opts);

    const json out_cfg = cfg.value("output", json::object());
    const std::vector<double> snaps = snapshot_times_from(out_cfg, T);
    const int modes = out_cfg.value("grid_modes", 64);
    const int osteps = out_cfg.value("oracle_steps", 4000);
    oracle::SpectralGrid grid{2, modes};
    Matrix grid_pts = grid.points();
    oracle::SpectralRun ref = oracle::self_converged_reference(
        grid, nu, oracle::SpectralNonlinearity::allen_cahn, *phi, T, osteps, snaps,
        oracle::SpectralRule::strang_exact, 1e-6, (ws.dir() / "cache").string(), "heat2d");

    std::ofstream snap_csv = ws.open_csv("snapshots.csv");
    snap_csv << "grid_id,t,value\n";
    double rel_final = std::numeric_limits<double>::quiet_NaN();
    double rel_max = 0.0;
    for (std::size_t s = 0; s < ref.times.size(); ++s) {
        const double t = ref.times[s];
        const int k = static_cast<int>(std::llround(t / (T / K)));
        DtbSet probe_set(set.h(), phi, spec);
        for (int i = 0; i < k && i < static_cast<int>(set.steps().size()); ++i)
            probe_set.push(set.steps()[i]);
        Vector dtb_vals = probe_set.eval(grid_pts, false).value;
        append_snapshot(snap_csv, "dtb", t, dtb_vals);
        append_snapshot(snap_csv, "ref", t, ref.fields[s]);
        const double rel = metric_rel_l2(dtb_vals, ref.fields[s]);
        rel_max = std::max(rel_max, rel);
        if (std::abs(t - T) < 1e-12) rel_final = rel;
        std::size_t row = static_cast<std::size_t>(k) - 1;
        if (row < report.rel_l2.size()) report.rel_l2[row] = rel;
    }
    write_report_csv(ws, report);
    set.save((ws.dir() / "dtbset").string());
    ws.note_artifact("dtbset/steps.jsonl");

    ws.metric("rel_l2_final", rel_final);
    ws.metric("rel_l2_max", rel_max);
    ws.metric("residual_max",
              *std::max_element(report.residual_rel.begin(), report.residual_rel.end()));
}

void run_ac5d(const json& cfg, Workspace& ws, std::uint64_t seed) {
    const json& integ = need(cfg, "integrator");
    const json& pde = need(cfg, "pde");
    netfam::NetworkSpec spec = parse_network(need(cfg, "network"));
    SamplerSpec sampler = parse_sampler(need(cfg, "sampler"), spec.input_dim);

    const double T = need(integ, "T").get<double>();
    const int K = need(integ, "K").get<int>();
    if (K < 1) config_fail("integrator.K must be >= 1");
    const int l = need(integ, "l").get<int>();
    const double nu = pde.value("nu", 0.01);
    FieldPtr phi = parse_initial(need(pde, "initial").get<std::string>(), spec.input_dim);

    netfam::ParamsPtr theta = pretrained_theta(cfg, spec, seed, ws);

    evolve::UpdatePolicy policy;
    policy.kind = evolve::UpdatePolicy::Kind::periodic_reset;
    policy.L = integ.value("reset_every", 20);
    policy.refit_iters = integ.value("refit_iters", 300);
    policy.refit_step = integ.value("refit_step", 1e-3);

    evolve::EvolveOptions opts;
    opts.lstsq.rcond = integ.value("rcond", 1e-6);
    opts.proj_tol = integ.value("proj_tol", 5e-2);
    opts.seed = seed;

    auto [set, report] = evolve::forward_euler_run(spec, theta, evolve::RhsOperator::allen_cahn(nu),
                                                   phi, T, K, sampler, l, policy, opts);

    const json out_cfg = cfg.value("output", json::object());
    const std::vector<double> snaps = snapshot_times_from(out_cfg, T);
    const int res = out_cfg.value("plane_resolution", 33);

    std::ofstream snap_csv = ws.open_csv("snapshots.csv");
    snap_csv << "grid_id,t,value\n";
    for (char plane : {'a', 'b', 'c', 'd', 'e'}) {
        targets::HyperplaneGrid grid = targets::hyperplane_points(plane, res);
        for (double t : snaps) {
            const int k = static_cast<int>(std::llround(t / (T / K)));
            DtbSet probe_set(set.h(), phi, spec);
            for (int i = 0; i < k && i < static_cast<int>(set.steps().size()); ++i)
                probe_set.push(set.steps()[i]);
            Vector vals = probe_set.eval(grid.points, false).value;
            append_snapshot(snap_csv, std::string("plane_") + plane, t, vals);
        }
    }

    std::ofstream resets = ws.open_csv("resets.csv");
    resets << "k,loss_before,loss_after\n";
    bool nonincreasing = true;
    for (std::size_t i = 0; i < report.reset_steps.size(); ++i) {
        resets << report.reset_steps[i] << "," << fmt_num(report.reset_loss_before[i]) << ","
               << fmt_num(report.reset_loss_after[i]) << "\n";
        if (report.reset_loss_after[i] > report.reset_loss_before[i]) nonincreasing = false;
    }
    write_report_csv(ws, report);

    ws.metric("residual_max",
              *std::max_element(report.residual_rel.begin(), report.residual_rel.end()));
    ws.metric("reset_count", static_cast<double>(report.reset_steps.size()));
    ws.metric("reset_loss_nonincreasing", nonincreasing ? 1.0 : 0.0);
}

void run_func_approx_5d(const json& cfg, Workspace& ws, std::uint64_t seed) {
    const json& fit = need(cfg, "fit");
    netfam::NetworkSpec spec = parse_network(need(cfg, "network"));
    const int n_train = need(fit, "samples").get<int>();
    const int n_heldout = fit.value("heldout", 2000);
    const int l = need(fit, "features").get<int>();
    const double rcond = fit.value("rcond", 1e-6);
    const int res = cfg.value("output", json::object()).value("plane_resolution", 33);

    netfam::ParamsPtr theta = pretrained_theta(cfg, spec, seed, ws);
    const int m = netfam::param_count(spec);
    IndexSet sub = select_subspace(m, l, derive_seed(seed, "subspace"));

    Rng train_rng(derive_seed(seed, "train"));
    Rng held_rng(derive_seed(seed, "heldout"));
    Matrix train = train_rng.uniform_box(n_train, 5);
    Matrix held = held_rng.uniform_box(n_heldout, 5);

    struct OpCase {
        std::string name;
        evolve::RhsOperator op;
    };
    const std::vector<OpCase> ops = {{"O1", evolve::RhsOperator::composite(0.005, 1, -1, 0)},
                                     {"O2", evolve::RhsOperator::composite(0.02, 0, 0, 0)},
                                     {"O3", evolve::RhsOperator::composite(0, 0, 0, 1)}};

    linalg::LstsqOptions lopts;
    lopts.rcond = rcond;

    std::ofstream table = ws.open_csv("approx_metrics.csv");
    table << "operator,train_residual_rel,heldout_rel_l2,alpha_l2\n";
    std::ofstream plane_csv = ws.open_csv("plane_errors.csv");
    plane_csv << "operator,plane,abs_max\n";
    std::ofstream snap_csv = ws.open_csv("snapshots.csv");
    snap_csv << "grid_id,t,value\n";

    for (const auto& oc : ops) {
        netfam::SampledFunction target = targets::operator_on_w(oc.op);
        Vector g_train = target(train);
        DtbApprox approx = approx_jform(spec, theta, sub, g_train, train, lopts);

        Vector fitted_held = project(approx, spec, held);
        const double rel_held = metric_rel_l2(fitted_held, target(held));
        table << oc.name << "," << fmt_num(approx.residual_rel) << "," << fmt_num(rel_held) << ","
              << fmt_num(approx.alpha.norm()) << "\n";
        ws.metric(oc.name + "_heldout_rel_l2", rel_held);
        ws.metric(oc.name + "_train_residual", approx.residual_rel);

        double abs_max_all = 0.0;
        for (char plane : {'a', 'b', 'c', 'd', 'e'}) {
            targets::HyperplaneGrid grid = targets::hyperplane_points(plane, res);
            Vector fitted = project(approx, spec, grid.points);
            Vector exact = target(grid.points);
            const double abs_max = (fitted - exact).cwiseAbs().maxCoeff();
            abs_max_all = std::max(abs_max_all, abs_max);
            plane_csv << oc.name << "," << plane << "," << fmt_num(abs_max) << "\n";
            append_snapshot(snap_csv, oc.name + "_plane_" + plane, 0.0, fitted);
        }
        ws.metric(oc.name + "_plane_abs_max", abs_max_all);
    }
}

void run_taylor_table(const json& cfg, Workspace& ws, std::uint64_t seed) {
    const json& fit = need(cfg, "fit");
    netfam::NetworkSpec spec = parse_network(need(cfg, "network"));
    const int n_train = need(fit, "samples").get<int>();
    const int n_heldout = fit.value("heldout", 2000);
    const int l = need(fit, "features").get<int>();
    const std::vector<double> rconds = need(fit, "rconds").get<std::vector<double>>();
    const std::vector<double> hs = need(fit, "hs").get<std::vector<double>>();

    netfam::ParamsPtr theta = pretrained_theta(cfg, spec, seed, ws);
    netfam::SampledFunction target =
        targets::operator_on_w(evolve::RhsOperator::composite(0.01, 1, -1, 0));

    evolve::TaylorTable tab =
        evolve::taylor_error_study(spec, *theta, target, rconds, hs, n_train, n_heldout, l, seed);

    std::ofstream csv = ws.open_csv("table.csv");
    csv << "rcond,eps_rel_ls,alpha_l2";
    for (double h : tab.hs) csv << ",eps_rel_t_h" << fmt_num(h);
    csv << "\n";
    for (const auto& row : tab.rows) {
        csv << fmt_num(row.rcond) << "," << fmt_num(row.eps_ls) << "," << fmt_num(row.alpha_l2);
        for (double e : row.eps_t) csv << "," << fmt_num(e);
        csv << "\n";
    }

    bool ls_monotone = true, alpha_monotone = true, taylor_monotone = true;
    for (std::size_t i = 1; i < tab.rows.size(); ++i) {
        if (tab.rows[i].eps_ls > tab.rows[i - 1].eps_ls) ls_monotone = false;
        if (tab.rows[i].alpha_l2 < tab.rows[i - 1].alpha_l2) alpha_monotone = false;
    }
    for (const auto& row : tab.rows) {
        if (row.rcond > 1e-4 + 1e-15) continue;
        for (std::size_t j = 1; j < row.eps_t.size(); ++j)
            if (row.eps_t[j] < row.eps_t[j - 1]) taylor_monotone = false;
    }
    ws.metric("eps_ls_monotone", ls_monotone ? 1.0 : 0.0);
    ws.metric("alpha_monotone", alpha_monotone ? 1.0 : 0.0);
    ws.metric("taylor_monotone", taylor_monotone ? 1.0 : 0.0);
    for (const auto& row : tab.rows) {
        if (std::abs(row.rcond - 1e-6) < 1e-18) {
            for (std::size_t j = 0; j < tab.hs.size(); ++j)
                if (std::abs(tab.hs[j] - 0.01) < 1e-15 && row.eps_ls > 0.0)
                    ws.metric("taylor_ratio_rcond1e6_h01", row.eps_t[j] / row.eps_ls);
        }
    }
}

void run_wgf_ring(const json& cfg, Workspace& ws, std::uint64_t seed) {
    const json& flow = need(cfg, "flow");
    netfam::NetworkSpec spec = parse_network(need(cfg, "network"));
    const int N = need(flow, "particles").get<int>();
    const double T = need(flow, "T").get<double>();
    const double h = need(flow, "h").get<double>();
    const int K = static_cast<int>(std::llround(T / h));
    const int l = need(flow, "features").get<int>();
    const double gamma = flow.value("gamma", 0.6);
    auto mu_vec = flow.value("mu0", std::vector<double>{1.25, 1.25});
    Eigen::RowVectorXd mu0 = Eigen::Map<Eigen::RowVectorXd>(mu_vec.data(), mu_vec.size());

    wflow::InteractionKernel kernel = wflow::InteractionKernel::aggregation();
    Rng rng(derive_seed(seed, "particles"));
    wflow::ParticleEnsemble ens;
    ens.Z = rng.gaussian(N, spec.input_dim, gamma);
    ens.Z.rowwise() += mu0;
    ens.X = ens.Z;

    auto theta = std::make_shared<netfam::ParamVec>(netfam::init_params(spec, derive_seed(seed, "init")));
    netfam::ParamsPtr theta_ptr = theta;
    const int m = netfam::param_count(spec);
    IndexSet sub = select_subspace(m, l, derive_seed(seed, "subspace"));

    wflow::FlowOptions opts;
    opts.lstsq.rcond = flow.value("rcond", 1e-6);

    const json out_cfg = cfg.value("output", json::object());
    std::vector<double> snaps = snapshot_times_from(out_cfg, T);

    std::ofstream particles = ws.open_csv("particles.csv");
    particles << "t,id,x1,x2\n";
    std::ofstream stats = ws.open_csv("ring_stats.csv");
    stats << "t,mean_radius,radius_std,interaction_energy,residual_rel\n";

    auto want = [&](double t) {
        for (double s : snaps)
            if (std::abs(t - s) < h / 2) return true;
        return false;
    };
    auto dump_particles = [&](double t) {
        for (int i = 0; i < N; ++i)
            particles << fmt_num(t) << "," << i << "," << fmt_num(ens.X(i, 0)) << ","
                      << fmt_num(ens.X(i, 1)) << "\n";
    };

    dump_particles(0.0);
    double max_residual = 0.0;
    wflow::StepStats st;
    for (int k = 0; k < K; ++k) {
        st = wflow::wgf_step(spec, theta_ptr, sub, ens, kernel, h, opts);
        max_residual = std::max(max_residual, st.residual_rel);
        const double t = (k + 1) * h;
        if (want(t) || k + 1 == K) {
            auto [mean_r, std_r] = wflow::radius_stats(ens.X, mu0);
            stats << fmt_num(t) << "," << fmt_num(mean_r) << "," << fmt_num(std_r) << ","
                  << fmt_num(wflow::interaction_energy(kernel, ens.X)) << ","
                  << fmt_num(st.residual_rel) << "\n";
            dump_particles(t);
        }
    }

    auto [mean_r, std_r] = wflow::radius_stats(ens.X, mu0);
    ws.metric("final_mean_radius", mean_r);
    ws.metric("final_radius_std", std_r);
    ws.metric("residual_max", max_residual);
}

void run_whf_ho(const json& cfg, Workspace& ws, std::uint64_t seed) {
    const json& flow = need(cfg, "flow");
    netfam::NetworkSpec spec = parse_network(need(cfg, "network"));
    const int N = need(flow, "particles").get<int>();
    const double T = need(flow, "T").get<double>();
    const double h = need(flow, "h").get<double>();
    const int K = static_cast<int>(std::llround(T / h));
    const int l = need(flow, "features").get<int>();
    const int d = spec.input_dim;

    wflow::LinearPotential V = wflow::LinearPotential::harmonic_10d(d);
    Vector omega(d);
    omega(0) = std::sqrt(3.0) / 2.0;
    for (int i = 1; i < d; ++i) omega(i) = 1.0;

    Rng rng(derive_seed(seed, "particles"));
    wflow::ParticleEnsemble ens;
    ens.Z = rng.gaussian(N, d, 1.0);
    ens.X = ens.Z;
    Matrix lambda0 = ens.Z;
    lambda0.col(0).setZero();  // grad of Phi(0,z) = 1/2 sum_{i>=2} z_i^2
    ens.Lambda = lambda0;

    auto theta = std::make_shared<netfam::ParamVec>(netfam::init_params(spec, derive_seed(seed, "init")));
    netfam::ParamsPtr theta_ptr = theta;
    IndexSet sub = select_subspace(netfam::param_count(spec), l, derive_seed(seed, "subspace"));

    wflow::FlowOptions opts;
    opts.lstsq.rcond = flow.value("rcond", 1e-8);

    const json out_cfg = cfg.value("output", json::object());
    std::vector<double> snaps = snapshot_times_from(out_cfg, T);
    const int tracked = std::min(N, out_cfg.value("tracked_particles", 6));

    std::ofstream traj = ws.open_csv("trajectories.csv");
    traj << "t,id";
    for (int c = 0; c < d; ++c) traj << ",x" << c + 1;
    for (int c = 0; c < d; ++c) traj << ",lambda" << c + 1;
    traj << "\n";
    std::ofstream ham = ws.open_csv("hamiltonian.csv");
    ham << "t,H\n";

    auto dump = [&](double t) {
        for (int i = 0; i < tracked; ++i) {
            traj << fmt_num(t) << "," << i;
            for (int c = 0; c < d; ++c) traj << "," << fmt_num(ens.X(i, c));
            for (int c = 0; c < d; ++c) traj << "," << fmt_num((*ens.Lambda)(i, c));
            traj << "\n";
        }
        ham << fmt_num(t) << "," << fmt_num(wflow::ensemble_hamiltonian(V, ens)) << "\n";
    };

    auto want = [&](double t) {
        for (double s : snaps)
            if (std::abs(t - s) < h / 2) return true;
        return false;
    };

    const double H0 = wflow::ensemble_hamiltonian(V, ens);
    dump(0.0);

    // Closed-form comparison accumulated over snapshot times.
    double err_sq = 0.0, ref_sq = 0.0;
    double max_residual = 0.0;
    Vector x_exact(d), v_exact(d);
    for (int k = 0; k < K; ++k) {
        wflow::StepStats st = wflow::whf_step(spec, theta_ptr, sub, ens, V, h, opts);
        max_residual = std::max(max_residual, st.residual_rel);
        const double t = (k + 1) * h;
        const bool snap = want(t) || k + 1 == K;
        if (snap) {
            dump(t);
            for (int i = 0; i < N; ++i) {
                oracle::ho_closed_form(ens.Z.row(i).transpose(),
                                       lambda0.row(i).transpose(), omega, t, x_exact, v_exact);
                err_sq += (ens.X.row(i).transpose() - x_exact).squaredNorm();
                ref_sq += x_exact.squaredNorm();
            }
        }
    }

    const double HT = wflow::ensemble_hamiltonian(V, ens);
    ws.metric("traj_rel_l2", std::sqrt(err_sq / std::max(ref_sq, 1e-300)));
    ws.metric("hamiltonian_drift", std::abs(HT - H0));
    ws.metric("residual_max", max_residual);
}

}  // namespace

json merged_config(const json& doc, const std::string& scale) {
    json cfg = doc;
    cfg.erase("scales");
    if (doc.contains("scales")) {
        const json& scales = doc["scales"];
        if (!scales.contains(scale)) config_fail("config has no scale: " + scale);
        deep_merge(cfg, scales[scale]);
    }
    return cfg;
}

int run_experiment(const std::string& config_path, const RunFlags& flags) {
    json doc;
    std::string experiment_id = "experiment";
    try {
        std::ifstream in(config_path);
        if (!in) config_fail("cannot open config: " + config_path);
        try {
            doc = json::parse(in);
        } catch (const json::exception& e) {
            config_fail(std::string("JSON parse error: ") + e.what());
        }
        json cfg = merged_config(doc, flags.scale);
        experiment_id = need(cfg, "experiment").get<std::string>();
        const std::string kind = need(cfg, "kind").get<std::string>();
        std::uint64_t seed = need(cfg, "seed").get<std::uint64_t>();
        if (flags.seed_override) seed = *flags.seed_override;
        cfg["seed"] = seed;

        const fs::path out_dir = !flags.out_dir.empty()
                                     ? fs::path(flags.out_dir)
                                     : fs::path("out") / (experiment_id + "_" + flags.scale);
        Workspace ws(out_dir, flags.deterministic);

        const auto t0 = std::chrono::steady_clock::now();
        if (kind == "heat_trapezoidal") run_heat(cfg, ws, seed, true);
        else if (kind == "heat_forward_euler") run_heat(cfg, ws, seed, false);
        else if (kind == "ac2d_corrected") run_ac2d(cfg, ws, seed);
        else if (kind == "ac5d_reset") run_ac5d(cfg, ws, seed);
        else if (kind == "func_approx_5d") run_func_approx_5d(cfg, ws, seed);
        else if (kind == "taylor_table") run_taylor_table(cfg, ws, seed);
        else if (kind == "wgf_ring") run_wgf_ring(cfg, ws, seed);
        else if (kind == "whf_ho") run_whf_ho(cfg, ws, seed);
        else config_fail("unknown experiment kind: " + kind);
        const double wall =
            std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();

        json extra;
        ws.write_manifest(cfg, wall, extra);

        std::vector<CheckResult> checks = evaluate_checks(cfg, ws.metrics());
        bool all_pass = true;
        for (const auto& c : checks) {
            std::cout << (c.pass ? "[PASS] " : "[FAIL] ") << experiment_id << ": " << c.description
                      << "\n";
            all_pass = all_pass && c.pass;
        }
        for (const auto& [k, v] : ws.metrics()) std::cout << "  " << k << " = " << fmt_num(v) << "\n";
        if (flags.check && !all_pass) return 2;
        return 0;
    } catch (const Error& e) {
        std::cerr << "error (" << experiment_id << "): " << e.what() << "\n";
        return e.code() == Errc::config_error ? 1 : 3;
    } catch (const json::exception& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    }
}

int verify_output_dir(const std::string& out_dir) {
    try {
        std::ifstream in(fs::path(out_dir) / "manifest.json");
        if (!in) config_fail("cannot open manifest in " + out_dir);
        json man = json::parse(in);
        bool ok = true;
        for (const auto& art : man.at("artifacts")) {
            const fs::path p = fs::path(out_dir) / art.at("path").get<std::string>();
            std::ifstream f(p, std::ios::binary);
            std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
            const std::string digest = to_hex(fnv1a(bytes.data(), bytes.size()));
            const bool match = digest == art.at("fnv64").get<std::string>() &&
                               bytes.size() == art.at("bytes").get<std::size_t>();
            std::cout << (match ? "[PASS] " : "[FAIL] ") << p.string() << "\n";
            ok = ok && match;
        }
        return ok ? 0 : 2;
    } catch (const std::exception& e) {
        std::cerr << "verify error: " << e.what() << "\n";
        return 1;
    }
}

}  // namespace dtb::harness
