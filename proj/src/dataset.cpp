#include "ssmtl/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

namespace ssmtl {

std::optional<int> parse_pathology(std::string_view s) {
    for (int i = 0; i < kPathologyClasses; ++i)
        if (kPathologyNames[static_cast<std::size_t>(i)] == s) return i;
    return std::nullopt;
}

Dataset::Dataset(std::vector<LabeledSample> samples) : samples_(std::move(samples)) {
    std::set<std::string> ids;
    for (const auto& s : samples_) {
        if (s.spt_label < 0 || s.spt_label >= kPathologyClasses)
            throw DatasetError("sample '" + s.id + "': pathology label out of range");
        if (!ids.insert(s.id).second) throw DatasetError("duplicate sample id '" + s.id + "'");
        ++counts_[static_cast<std::size_t>(s.spt_label)];
    }
}

// ============================================================================
// Directory ingestion
// ============================================================================

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string field;
    std::istringstream is(line);
    while (std::getline(is, field, ',')) out.push_back(field);
    if (!line.empty() && line.back() == ',') out.emplace_back();
    return out;
}

}  // namespace

Dataset load_labeled_dir(const std::filesystem::path& image_dir, const std::filesystem::path& labels_file) {
    std::ifstream in(labels_file);
    if (!in) throw DatasetError("cannot open labels file " + labels_file.string());

    std::string line;
    if (!std::getline(in, line)) throw DatasetError(labels_file.string() + ": empty labels file");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.rfind("\xEF\xBB\xBF", 0) == 0) line.erase(0, 3);
    if (line != "id,filename,class")
        throw DatasetError(labels_file.string() + ": header must be 'id,filename,class', got '" + line + "'");

    std::vector<LabeledSample> samples;
    std::vector<std::string> problems;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const auto f = split_csv_line(line);
        if (f.size() != 3) {
            problems.push_back("line " + std::to_string(lineno) + ": expected 3 fields");
            continue;
        }
        const auto& id = f[0];
        const auto cls = parse_pathology(f[2]);
        if (!cls) {
            problems.push_back("id '" + id + "': unknown class '" + f[2] + "'");
            continue;
        }
        const auto path = image_dir / f[1];
        if (!std::filesystem::exists(path)) {
            problems.push_back("id '" + id + "': missing file " + path.string());
            continue;
        }
        try {
            samples.push_back(LabeledSample{id, read_image(path), *cls, {}, std::nullopt});
        } catch (const ImageIoError& e) {
            problems.push_back("id '" + id + "': unreadable image (" + e.what() + ")");
        }
    }
    if (!problems.empty()) {
        std::string msg = "failed to load dataset (" + std::to_string(problems.size()) + " problem(s)):";
        for (const auto& p : problems) msg += "\n  " + p;
        throw DatasetError(msg);
    }
    return Dataset(std::move(samples));
}

void export_dataset(const Dataset& ds, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir / "images");
    std::ofstream labels(dir / "labels.csv", std::ios::binary);
    labels << "id,filename,class\n";
    bool any_attr = false;
    for (const auto& s : ds.samples()) {
        const std::string fname = "images/" + s.id + ".ppm";
        write_ppm(s.image, dir / fname);
        labels << s.id << ',' << fname << ',' << kPathologyNames[static_cast<std::size_t>(s.spt_label)] << '\n';
        any_attr = any_attr || s.has_bubbles.has_value();
    }
    if (any_attr) {
        std::ofstream attrs(dir / "attributes.csv", std::ios::binary);
        attrs << "id,has_bubbles\n";
        for (const auto& s : ds.samples())
            attrs << s.id << ',' << (s.has_bubbles ? (*s.has_bubbles ? "1" : "0") : "") << '\n';
    }
}

// ============================================================================
// Synthetic data
// ============================================================================

void SyntheticParams::validate() const {
    if (per_class < 1) throw DatasetError("synthetic per-class count must be > 0");
    if (image_size < 16) throw DatasetError("synthetic image size must be >= 16");
    if (!(confounder_bias >= 0.0 && confounder_bias <= 1.0))
        throw DatasetError("confounder_bias must be in [0,1]");
    if (!(lesion_strength >= 0.0 && lesion_strength <= 1.0))
        throw DatasetError("lesion_strength must be in [0,1]");
}

namespace {

struct Canvas {
    int size;
    std::vector<double> rgb;  // [y][x][c], 0..255

    explicit Canvas(int s) : size(s), rgb(static_cast<std::size_t>(s) * s * 3, 0.0) {}
    double* px(int y, int x) { return &rgb[(static_cast<std::size_t>(y) * size + x) * 3]; }

    void blend(int y, int x, const std::array<double, 3>& color, double alpha) {
        if (y < 0 || x < 0 || y >= size || x >= size || alpha <= 0.0) return;
        alpha = std::min(alpha, 1.0);
        double* p = px(y, x);
        for (int c = 0; c < 3; ++c) p[c] = (1 - alpha) * p[c] + alpha * color[static_cast<std::size_t>(c)];
    }

    ImageU8 to_image() const {
        ImageU8 img(size, size);
        for (std::size_t i = 0; i < rgb.size(); ++i) img.pixels[i] = round_clamp_u8(rgb[i]);
        return img;
    }
};

// Pink mucosa with smooth shading and darker fold ridges.
void paint_tissue(Canvas& cv, Rng& rng) {
    const int S = cv.size;
    const std::array<double, 3> base = {198 + normal(rng, 0, 5), 112 + normal(rng, 0, 5), 104 + normal(rng, 0, 5)};
    const double shade_th = uniform(rng, 0, 2 * M_PI), shade_f = uniform(rng, 0.3, 0.9),
                 shade_ph = uniform(rng, 0, 2 * M_PI);
    const double fold_th = uniform(rng, 0, M_PI), fold_f = uniform(rng, 3.0, 5.0),
                 fold_ph = uniform(rng, 0, 2 * M_PI), warp_f = uniform(rng, 0.5, 1.5),
                 warp_ph = uniform(rng, 0, 2 * M_PI);
    const double ct = std::cos(shade_th), st = std::sin(shade_th);
    const double cf = std::cos(fold_th), sf = std::sin(fold_th);
    for (int y = 0; y < S; ++y) {
        for (int x = 0; x < S; ++x) {
            const double u = static_cast<double>(x) / S, v = static_cast<double>(y) / S;
            const double shade = 1.0 + 0.07 * std::sin(2 * M_PI * shade_f * (u * ct + v * st) + shade_ph);
            const double along = u * cf + v * sf, across = -u * sf + v * cf;
            const double warp = 0.6 * std::sin(2 * M_PI * warp_f * across + warp_ph);
            const double ridge = std::pow(std::max(0.0, std::sin(2 * M_PI * fold_f * along + warp + fold_ph)), 4);
            const double fold = 1.0 - 0.14 * ridge;
            double* p = cv.px(y, x);
            for (int c = 0; c < 3; ++c)
                p[c] = base[static_cast<std::size_t>(c)] * shade * fold + normal(rng, 0, 2.5);
        }
    }
}

// Irregular dark-red patches.
void paint_blotches(Canvas& cv, Rng& rng, double strength) {
    const int S = cv.size;
    const int count = 1 + static_cast<int>(uniform_index(rng, 3));
    for (int b = 0; b < count; ++b) {
        const double cx = uniform(rng, 0.2, 0.8) * S, cy = uniform(rng, 0.2, 0.8) * S;
        const double r0 = uniform(rng, 0.07, 0.14) * S;
        const int k1 = 2 + static_cast<int>(uniform_index(rng, 3)), k2 = 4 + static_cast<int>(uniform_index(rng, 3));
        const double a1 = uniform(rng, 0.1, 0.3), a2 = uniform(rng, 0.05, 0.15);
        const double p1 = uniform(rng, 0, 2 * M_PI), p2 = uniform(rng, 0, 2 * M_PI);
        const std::array<double, 3> color = {135 + normal(rng, 0, 6), 38 + normal(rng, 0, 4), 42 + normal(rng, 0, 4)};
        const int reach = static_cast<int>(r0 * 1.6) + 2;
        for (int y = static_cast<int>(cy) - reach; y <= static_cast<int>(cy) + reach; ++y) {
            for (int x = static_cast<int>(cx) - reach; x <= static_cast<int>(cx) + reach; ++x) {
                const double dx = x - cx, dy = y - cy;
                const double th = std::atan2(dy, dx);
                const double rb = r0 * (1 + a1 * std::sin(k1 * th + p1) + a2 * std::sin(k2 * th + p2));
                const double edge = std::clamp((rb - std::hypot(dx, dy)) / 2.0, 0.0, 1.0);
                cv.blend(y, x, color, strength * edge);
            }
        }
    }
}

void draw_vessel(Canvas& cv, Rng& rng, double x, double y, double dir, double length, int depth,
                 double strength, const std::array<double, 3>& color) {
    for (double t = 0; t < length; t += 0.5) {
        dir += normal(rng, 0, 0.12);
        x += 0.5 * std::cos(dir);
        y += 0.5 * std::sin(dir);
        const int ix = static_cast<int>(std::floor(x)), iy = static_cast<int>(std::floor(y));
        cv.blend(iy, ix, color, strength);
        cv.blend(iy + 1, ix, color, 0.35 * strength);
        cv.blend(iy, ix + 1, color, 0.35 * strength);
        if (depth < 2 && uniform01(rng) < 0.012) {
            const double side = uniform01(rng) < 0.5 ? -1.0 : 1.0;
            draw_vessel(cv, rng, x, y, dir + side * uniform(rng, 0.4, 1.0), (length - t) * 0.6, depth + 1,
                        strength, color);
        }
    }
}

// Thin saturated branching red curves.
void paint_vessels(Canvas& cv, Rng& rng, double strength) {
    const int S = cv.size;
    const int trees = 1 + static_cast<int>(uniform_index(rng, 2));
    const std::array<double, 3> color = {228, 22, 48};
    for (int t = 0; t < trees; ++t) {
        draw_vessel(cv, rng, uniform(rng, 0.2, 0.8) * S, uniform(rng, 0.2, 0.8) * S, uniform(rng, 0, 2 * M_PI),
                    uniform(rng, 0.4, 0.8) * S, 0, strength, color);
    }
}

// Bright translucent circles with darker rims and a specular dot.
void paint_bubbles(Canvas& cv, Rng& rng) {
    const int S = cv.size;
    const int count = 3 + static_cast<int>(uniform_index(rng, 5));
    for (int b = 0; b < count; ++b) {
        const double cx = uniform(rng, 0, S), cy = uniform(rng, 0, S);
        const double r = uniform(rng, 0.04, 0.1) * S;
        const int reach = static_cast<int>(r) + 2;
        for (int y = static_cast<int>(cy) - reach; y <= static_cast<int>(cy) + reach; ++y) {
            for (int x = static_cast<int>(cx) - reach; x <= static_cast<int>(cx) + reach; ++x) {
                const double d = std::hypot(x - cx, y - cy);
                if (d > r) continue;
                if (d > r - 1.3) {
                    cv.blend(y, x, {118, 70, 66}, 0.75);
                } else {
                    cv.blend(y, x, {246, 236, 228}, 0.55);
                }
            }
        }
        cv.blend(static_cast<int>(cy - r / 3), static_cast<int>(cx - r / 3), {255, 255, 255}, 0.9);
    }
}

}  // namespace

Dataset generate_synthetic(const SyntheticParams& params, std::uint64_t seed) {
    params.validate();
    std::vector<LabeledSample> samples;
    samples.reserve(static_cast<std::size_t>(params.per_class) * kPathologyClasses);
    for (int cls = 0; cls < kPathologyClasses; ++cls) {
        for (int i = 0; i < params.per_class; ++i) {
            Rng rng(derive_seed({seed, static_cast<std::uint64_t>(cls), static_cast<std::uint64_t>(i), 0x5947}));
            Canvas cv(params.image_size);
            paint_tissue(cv, rng);
            if (cls == 0) paint_blotches(cv, rng, params.lesion_strength);
            if (cls == 2) paint_vessels(cv, rng, params.lesion_strength);
            const double p_bubbles = cls == kNormalClass ? params.confounder_bias : 1.0 - params.confounder_bias;
            const bool bubbles = bernoulli(rng, p_bubbles);
            if (bubbles) paint_bubbles(cv, rng);

            char id[48];
            std::snprintf(id, sizeof id, "syn_%s_%04d", std::string(kPathologyNames[static_cast<std::size_t>(cls)]).c_str(), i);
            samples.push_back(LabeledSample{id, cv.to_image(), cls, {}, bubbles});
        }
    }
    return Dataset(std::move(samples));
}

// ============================================================================
// Split
// ============================================================================

DatasetSplit split(const Dataset& ds, const SplitRatios& r, std::uint64_t seed) {
    if (r.train < 0 || r.val < 0 || r.test < 0 || std::abs(r.train + r.val + r.test - 1.0) > 1e-9)
        throw ad::ConfigError("split ratios must be non-negative and sum to 1");
    std::array<std::vector<std::size_t>, kPathologyClasses> by_class;
    for (std::size_t i = 0; i < ds.size(); ++i) by_class[static_cast<std::size_t>(ds[i].spt_label)].push_back(i);

    std::vector<int> which(ds.size(), 0);  // 0 train, 1 val, 2 test
    for (int c = 0; c < kPathologyClasses; ++c) {
        auto& idx = by_class[static_cast<std::size_t>(c)];
        if (idx.empty()) continue;
        if (idx.size() < 10)
            throw ad::ConfigError("class '" + std::string(kPathologyNames[static_cast<std::size_t>(c)]) +
                                  "' has fewer than 10 samples; cannot stratify");
        Rng rng(derive_seed({seed, static_cast<std::uint64_t>(c), 0x5917}));
        shuffle(idx.begin(), idx.end(), rng);
        const auto n = static_cast<double>(idx.size());
        const auto n_val = static_cast<std::size_t>(std::floor(n * r.val + 1e-9));
        const auto n_test = static_cast<std::size_t>(std::floor(n * r.test + 1e-9));
        for (std::size_t k = 0; k < n_val; ++k) which[idx[k]] = 1;
        for (std::size_t k = n_val; k < n_val + n_test; ++k) which[idx[k]] = 2;
    }
    std::array<std::vector<LabeledSample>, 3> parts;
    for (std::size_t i = 0; i < ds.size(); ++i) parts[static_cast<std::size_t>(which[i])].push_back(ds[i]);
    return DatasetSplit{Dataset(std::move(parts[0])), Dataset(std::move(parts[1])), Dataset(std::move(parts[2]))};
}

// ============================================================================
// Batching
// ============================================================================

std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, std::uint64_t epoch) {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(derive_seed({seed, epoch, 0x0dde}));
    shuffle(order.begin(), order.end(), rng);
    return order;
}

LabeledSample materialize(const Dataset& ds, std::size_t index, int image_size,
                          const std::vector<DistortionSpec>& ssdts, std::uint64_t seed, std::uint64_t epoch) {
    const auto& src = ds[index];
    Rng rng(derive_seed({seed, epoch, static_cast<std::uint64_t>(index), 0x5a3b}));
    LabeledSample out{src.id, preprocess(src.image, image_size, rng), src.spt_label, {}, src.has_bubbles};
    for (const auto& spec : ssdts) {
        auto s = make_ssdt_sample(out.image, spec, rng);
        out.image = std::move(s.image);
        out.ssdt_labels[spec.task_name()] = s.distortion_class;
    }
    return out;
}

void image_to_tensor(const ImageU8& img, std::span<double> dst) {
    const std::size_t plane = static_cast<std::size_t>(img.height) * img.width;
    for (std::size_t p = 0; p < plane; ++p)
        for (std::size_t c = 0; c < 3; ++c) dst[c * plane + p] = img.pixels[p * 3 + c] / 255.0;
}

BatchIterator::BatchIterator(const Dataset& ds, std::size_t batch_size, std::uint64_t epoch, std::uint64_t seed,
                             std::vector<DistortionSpec> ssdts, int image_size, bool shuffle_order)
    : ds_(&ds), batch_size_(batch_size), epoch_(epoch), seed_(seed), ssdts_(std::move(ssdts)),
      image_size_(image_size) {
    if (batch_size < 1) throw ad::ConfigError("batch size must be >= 1");
    if (shuffle_order) {
        order_ = epoch_order(ds.size(), seed, epoch);
    } else {
        order_.resize(ds.size());
        std::iota(order_.begin(), order_.end(), std::size_t{0});
    }
}

std::size_t BatchIterator::num_batches() const { return (order_.size() + batch_size_ - 1) / batch_size_; }

bool BatchIterator::next(Batch& out) {
    if (pos_ >= order_.size()) return false;
    const std::size_t n = std::min(batch_size_, order_.size() - pos_);
    const auto S = static_cast<std::size_t>(image_size_);
    out.images = ad::Tensor({n, 3, S, S});
    out.spt_labels.assign(n, 0);
    out.ssdt_labels.assign(ssdts_.size(), std::vector<int>(n, 0));
    out.indices.assign(order_.begin() + static_cast<std::ptrdiff_t>(pos_),
                       order_.begin() + static_cast<std::ptrdiff_t>(pos_ + n));
    auto data = out.images.data();
    for (std::size_t b = 0; b < n; ++b) {
        const auto s = materialize(*ds_, out.indices[b], image_size_, ssdts_, seed_, epoch_);
        image_to_tensor(s.image, data.subspan(b * 3 * S * S, 3 * S * S));
        out.spt_labels[b] = s.spt_label;
        for (std::size_t t = 0; t < ssdts_.size(); ++t) out.ssdt_labels[t][b] = s.ssdt_labels.at(ssdts_[t].task_name());
    }
    pos_ += n;
    return true;
}

}  // namespace ssmtl
