#include "dtb/approx.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>

namespace dtb {

IndexSet select_subspace(int m, int l, std::uint64_t seed) {
    if (l < 1 || l > m) fail(Errc::bad_size, "subspace size must satisfy 1 <= l <= m");
    // Floyd's sampling: uniform without replacement, O(l) memory.
    Rng rng(seed);
    std::vector<char> taken(m, 0);
    std::vector<int> picked;
    picked.reserve(l);
    for (int j = m - l; j < m; ++j) {
        const int t = static_cast<int>(rng.next_u64() % static_cast<std::uint64_t>(j + 1));
        if (!taken[t]) {
            taken[t] = 1;
            picked.push_back(t);
        } else {
            taken[j] = 1;
            picked.push_back(j);
        }
    }
    std::sort(picked.begin(), picked.end());
    return IndexSet{std::move(picked), seed};
}

Vector embed_direction(const IndexSet& sub, const Vector& alpha, int m) {
    if (sub.size() != alpha.size()) fail(Errc::dimension_mismatch, "subspace/alpha size mismatch");
    Vector dir = Vector::Zero(m);
    for (int i = 0; i < sub.size(); ++i) dir(sub.indices[i]) = alpha(i);
    return dir;
}

namespace {

double relative_residual(const Matrix& J, const Vector& alpha, const Vector& g) {
    const double gn = g.norm();
    const double rn = (J * alpha - g).norm();
    // For zero targets the absolute residual is reported; avoids 0/0.
    return gn > 0.0 ? rn / gn : rn;
}

}  // namespace

DtbApprox approx_gform(const netfam::NetworkSpec& spec, netfam::ParamsPtr theta,
                       const IndexSet& subspace, const Vector& target_values, const Matrix& samples,
                       const linalg::LstsqOptions& opts) {
    netfam::TangentBlock tb = netfam::tangent_features(spec, *theta, samples, subspace.indices, false);
    if (tb.features.rows() != target_values.size())
        fail(Errc::dimension_mismatch, "target length must equal n*q");
    const double n = static_cast<double>(tb.features.rows());
    Matrix G = (tb.features.transpose() * tb.features) / n;
    Vector p = (tb.features.transpose() * target_values) / n;
    DtbApprox out;
    out.theta = std::move(theta);
    out.subspace = subspace;
    out.alpha = linalg::solve_psd(G, p, opts);
    out.residual_rel = relative_residual(tb.features, out.alpha, target_values);
    return out;
}

DtbApprox approx_jform(const netfam::NetworkSpec& spec, netfam::ParamsPtr theta,
                       const IndexSet& subspace, const Vector& target_values, const Matrix& samples,
                       const linalg::LstsqOptions& opts) {
    netfam::TangentBlock tb = netfam::tangent_features(spec, *theta, samples, subspace.indices, false);
    if (tb.features.rows() != target_values.size())
        fail(Errc::dimension_mismatch, "target length must equal n*q");
    DtbApprox out;
    out.theta = std::move(theta);
    out.subspace = subspace;
    out.alpha = linalg::lstsq_svd(tb.features, target_values, opts);
    out.residual_rel = relative_residual(tb.features, out.alpha, target_values);
    return out;
}

Vector project(const DtbApprox& approx, const netfam::NetworkSpec& spec, const Matrix& points) {
    netfam::TangentBlock tb =
        netfam::tangent_features(spec, *approx.theta, points, approx.subspace.indices, false);
    return tb.features * approx.alpha;
}

DtbSet::DtbSet(double h, FieldPtr initial, netfam::NetworkSpec spec)
    : h_(h), initial_(std::move(initial)), spec_(std::move(spec)) {
    if (!(h_ > 0.0)) fail(Errc::bad_size, "time step must be positive");
    if (!initial_) fail(Errc::bad_size, "initial condition handle required");
}

DtbSet::Batch DtbSet::eval(const Matrix& points, bool with_derivs) const {
    const Eigen::Index n = points.rows();
    Batch out;
    if (with_derivs) {
        initial_->derivs_batch(points, out.value, out.grad, out.lap);
    } else {
        out.value = initial_->values(points);
    }

    // Group contiguous steps sharing one theta; directions add component-wise.
    const int m = netfam::param_count(spec_);
    std::size_t i = 0;
    while (i < steps_.size()) {
        std::size_t j = i;
        Vector dir = Vector::Zero(m);
        while (j < steps_.size() && steps_[j].theta == steps_[i].theta) {
            for (const auto& c : steps_[j].comps) dir += embed_direction(c.subspace, c.alpha, m);
            ++j;
        }
        netfam::DirectionalEval de =
            netfam::tb_directional(spec_, *steps_[i].theta, dir, points, with_derivs);
        out.value += h_ * de.values.col(0);
        if (with_derivs) {
            out.grad += h_ * de.grads;
            out.lap += h_ * de.laps;
        }
        i = j;
    }
    return out;
}

Vector DtbSet::eval_what(const Matrix& points, EvalWhat what, int grad_axis) const {
    Batch b = eval(points, what != EvalWhat::value);
    switch (what) {
        case EvalWhat::value: return b.value;
        case EvalWhat::grad: return b.grad.col(grad_axis);
        case EvalWhat::laplacian: return b.lap;
    }
    return b.value;
}

void DtbSet::save(const std::string& directory) const {
    namespace fs = std::filesystem;
    fs::create_directories(directory);
    std::ofstream out(fs::path(directory) / "steps.jsonl");
    netfam::ParamsPtr last;
    int theta_id = -1;
    for (std::size_t k = 0; k < steps_.size(); ++k) {
        const DtbStep& st = steps_[k];
        if (st.theta != last) {
            ++theta_id;
            last = st.theta;
            char name[64];
            std::snprintf(name, sizeof(name), "theta_%04d.json", theta_id);
            netfam::save_checkpoint((fs::path(directory) / name).string(), spec_, *st.theta);
        }
        nlohmann::json rec;
        rec["k"] = k;
        rec["h"] = h_;
        rec["theta_id"] = theta_id;
        rec["residual_rel"] = st.residual_rel;
        nlohmann::json comps = nlohmann::json::array();
        for (const auto& c : st.comps) {
            nlohmann::json jc;
            jc["seed"] = c.subspace.seed;
            jc["subspace_digest"] = to_hex(c.subspace.digest());
            jc["l"] = c.subspace.indices.size();
            jc["alpha"] = std::vector<double>(c.alpha.data(), c.alpha.data() + c.alpha.size());
            comps.push_back(std::move(jc));
        }
        rec["components"] = std::move(comps);
        out << rec.dump() << "\n";
    }
}

DtbSet DtbSet::load(const std::string& directory, FieldPtr initial) {
    namespace fs = std::filesystem;
    std::ifstream in(fs::path(directory) / "steps.jsonl");
    if (!in) fail(Errc::config_error, "cannot open " + directory + "/steps.jsonl");

    std::map<int, netfam::ParamsPtr> thetas;
    std::optional<netfam::NetworkSpec> spec;
    auto theta_for = [&](int id) {
        auto it = thetas.find(id);
        if (it != thetas.end()) return it->second;
        char name[64];
        std::snprintf(name, sizeof(name), "theta_%04d.json", id);
        auto [s, p] = netfam::load_checkpoint((fs::path(directory) / name).string());
        if (!spec) spec = s;
        auto ptr = std::make_shared<netfam::ParamVec>(std::move(p));
        thetas.emplace(id, ptr);
        return netfam::ParamsPtr(ptr);
    };

    std::vector<DtbStep> steps;
    double h = 0.0;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        nlohmann::json rec = nlohmann::json::parse(line);
        h = rec.at("h").get<double>();
        DtbStep st;
        st.theta = theta_for(rec.at("theta_id").get<int>());
        st.residual_rel = rec.at("residual_rel").get<double>();
        for (const auto& jc : rec.at("components")) {
            DtbStep::Component c;
            c.subspace = select_subspace(netfam::param_count(*spec),
                                         jc.at("l").get<int>(), jc.at("seed").get<std::uint64_t>());
            if (to_hex(c.subspace.digest()) != jc.at("subspace_digest").get<std::string>())
                fail(Errc::config_error, "subspace digest mismatch on load");
            auto a = jc.at("alpha").get<std::vector<double>>();
            c.alpha = Eigen::Map<const Vector>(a.data(), static_cast<Eigen::Index>(a.size()));
            st.comps.push_back(std::move(c));
        }
        steps.push_back(std::move(st));
    }
    if (!spec) fail(Errc::config_error, "empty DTB set directory");
    DtbSet set(h, std::move(initial), *spec);
    for (auto& st : steps) set.push(std::move(st));
    return set;
}

}  // namespace dtb
