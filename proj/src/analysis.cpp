#include "ssmtl/analysis.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "ssmtl/trainer.hpp"

namespace ssmtl {

Matrix FeatureTable::matrix() const {
    Matrix m;
    m.reserve(rows.size());
    for (const auto& r : rows) m.push_back(r.features);
    return m;
}

std::vector<int> FeatureTable::true_classes() const {
    std::vector<int> out;
    for (const auto& r : rows) out.push_back(r.true_class);
    return out;
}

void FeatureTable::write_csv(const std::filesystem::path& path) const {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("cannot write " + path.string());
    os << "id,true_class,pred_class";
    for (std::size_t d = 0; d < dim; ++d) os << ",f" << d;
    os << '\n';
    char buf[64];
    for (const auto& r : rows) {
        os << r.id << ',' << r.true_class << ',' << r.pred_class;
        for (double v : r.features) {
            auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
            os << ',' << std::string_view(buf, static_cast<std::size_t>(end - buf));
        }
        os << '\n';
    }
}

FeatureTable FeatureTable::read_csv(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot open " + path.string());
    std::string line;
    if (!std::getline(is, line) || line.rfind("id,true_class,pred_class", 0) != 0)
        throw std::runtime_error(path.string() + ": not a feature table");
    FeatureTable t;
    t.dim = static_cast<std::size_t>(std::count(line.begin(), line.end(), ',')) - 2;
    std::size_t lineno = 1;
    while (std::getline(is, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::istringstream ls(line);
        std::string field;
        FeatureRow r;
        std::getline(ls, r.id, ',');
        std::getline(ls, field, ',');
        r.true_class = std::stoi(field);
        std::getline(ls, field, ',');
        r.pred_class = std::stoi(field);
        while (std::getline(ls, field, ',')) r.features.push_back(std::stod(field));
        if (r.features.size() != t.dim)
            throw std::runtime_error(path.string() + ":" + std::to_string(lineno) + ": expected " +
                                     std::to_string(t.dim) + " features");
        t.rows.push_back(std::move(r));
    }
    return t;
}

FeatureTable extract_features(MultiTaskModel& model, const Dataset& ds, const std::vector<DistortionSpec>& ssdts,
                              std::uint64_t seed, std::size_t batch_size) {
    auto inf = infer(model, ds, ssdts, seed, batch_size, true);
    FeatureTable t;
    t.dim = static_cast<std::size_t>(model.arch().fc2_dim);
    for (std::size_t i = 0; i < ds.size(); ++i)
        t.rows.push_back(FeatureRow{ds[i].id, inf.labels[0][i], inf.predictions[0][i], std::move(inf.features[i])});
    return t;
}

// ============================================================================
// PCA
// ============================================================================

PcaResult pca_project(const Matrix& x, std::size_t k) {
    if (x.empty()) throw ad::InputError("pca_project: no rows");
    const std::size_t n = x.size(), d = x.front().size();
    if (k > d) throw ad::InputError("pca_project: k=" + std::to_string(k) + " exceeds feature dim " + std::to_string(d));
    if (n < k) throw ad::InputError("pca_project: need at least k rows");
    Eigen::MatrixXd X(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));
    for (std::size_t i = 0; i < n; ++i) {
        if (x[i].size() != d) throw ad::InputError("pca_project: ragged feature rows");
        for (std::size_t j = 0; j < d; ++j) X(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = x[i][j];
    }
    const Eigen::RowVectorXd mean = X.colwise().mean();
    X.rowwise() -= mean;
    const Eigen::MatrixXd cov = (X.transpose() * X) / static_cast<double>(std::max<std::size_t>(n - 1, 1));
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
    if (eig.info() != Eigen::Success) throw std::runtime_error("pca_project: eigendecomposition failed");

    // Eigen returns ascending eigenvalues.
    const Eigen::VectorXd vals = eig.eigenvalues().cwiseMax(0.0);
    const double total = vals.sum();
    PcaResult r;
    r.mean.assign(mean.data(), mean.data() + d);
    for (std::size_t c = 0; c < k; ++c) {
        const auto col = static_cast<Eigen::Index>(d - 1 - c);
        Eigen::VectorXd v = eig.eigenvectors().col(col);
        // Sign convention: largest-magnitude entry positive.
        Eigen::Index imax;
        v.cwiseAbs().maxCoeff(&imax);
        if (v(imax) < 0) v = -v;
        r.components.emplace_back(v.data(), v.data() + d);
        r.explained_ratio.push_back(total > 0 ? vals(col) / total : 0.0);
    }
    r.points.assign(n, std::vector<double>(k, 0.0));
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t c = 0; c < k; ++c) {
            double s = 0.0;
            for (std::size_t j = 0; j < d; ++j) s += X(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) * r.components[c][j];
            r.points[i][c] = s;
        }
    return r;
}

Matrix pca_reconstruct_centered(const PcaResult& pca) {
    const std::size_t d = pca.mean.size();
    Matrix out(pca.points.size(), std::vector<double>(d, 0.0));
    for (std::size_t i = 0; i < pca.points.size(); ++i)
        for (std::size_t c = 0; c < pca.components.size(); ++c)
            for (std::size_t j = 0; j < d; ++j) out[i][j] += pca.points[i][c] * pca.components[c][j];
    return out;
}

void write_projection(const FeatureTable& table, const PcaResult& pca, const std::filesystem::path& csv,
                      const std::filesystem::path& sidecar) {
    if (pca.points.size() != table.rows.size()) throw ad::InputError("write_projection: row count mismatch");
    static const char* axes[] = {"x", "y", "z"};
    std::ofstream os(csv, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("cannot write " + csv.string());
    os << "id,true_class";
    for (std::size_t c = 0; c < pca.components.size(); ++c)
        os << ',' << (c < 3 ? std::string(axes[c]) : "pc" + std::to_string(c));
    os << '\n';
    char buf[64];
    for (std::size_t i = 0; i < table.rows.size(); ++i) {
        os << table.rows[i].id << ',' << table.rows[i].true_class;
        for (double v : pca.points[i]) {
            auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
            os << ',' << std::string_view(buf, static_cast<std::size_t>(end - buf));
        }
        os << '\n';
    }
    nlohmann::json j = {{"explained_variance_ratio", pca.explained_ratio}, {"n", table.rows.size()}, {"dim", table.dim}};
    std::ofstream(sidecar, std::ios::trunc) << j.dump(2) << '\n';
}

// ============================================================================
// k-NN purity
// ============================================================================

PurityResult knn_purity(const Matrix& x, std::span<const int> labels, std::size_t k, Distance metric) {
    const std::size_t n = x.size();
    if (labels.size() != n) throw ad::InputError("knn_purity: labels/rows length mismatch");
    if (k < 1 || n <= k) throw ad::InputError("knn_purity: need more than k rows");
    int max_label = 0;
    for (int l : labels) {
        if (l < 0) throw ad::InputError("knn_purity: labels must be non-negative");
        max_label = std::max(max_label, l);
    }

    Matrix pts = x;
    if (metric == Distance::Cosine) {
        for (auto& row : pts) {
            const double norm = std::sqrt(std::inner_product(row.begin(), row.end(), row.begin(), 0.0));
            if (norm > 0)
                for (auto& v : row) v /= norm;
        }
    }
    auto dist = [&](std::size_t a, std::size_t b) {
        double s = 0.0;
        for (std::size_t j = 0; j < pts[a].size(); ++j) {
            const double diff = pts[a][j] - pts[b][j];
            s += diff * diff;
        }
        return s;
    };

    std::vector<double> sum(static_cast<std::size_t>(max_label) + 1, 0.0);
    std::vector<std::size_t> count(sum.size(), 0);
    double overall = 0.0;
    std::vector<std::pair<double, std::size_t>> cand(n - 1);
    for (std::size_t i = 0; i < n; ++i) {
        std::size_t m = 0;
        for (std::size_t j = 0; j < n; ++j)
            if (j != i) cand[m++] = {dist(i, j), j};
        std::partial_sort(cand.begin(), cand.begin() + static_cast<std::ptrdiff_t>(k), cand.end());
        std::size_t same = 0;
        for (std::size_t q = 0; q < k; ++q)
            if (labels[cand[q].second] == labels[i]) ++same;
        const double p = static_cast<double>(same) / static_cast<double>(k);
        sum[static_cast<std::size_t>(labels[i])] += p;
        ++count[static_cast<std::size_t>(labels[i])];
        overall += p;
    }
    PurityResult r;
    for (std::size_t c = 0; c < sum.size(); ++c)
        r.per_class.push_back(count[c] ? std::optional<double>(sum[c] / static_cast<double>(count[c])) : std::nullopt);
    r.overall = overall / static_cast<double>(n);
    return r;
}

}  // namespace ssmtl
