#include "ccgl/signal_ingest.hpp"

#include <json.hpp>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <random>
#include <set>
#include <sstream>

namespace ccgl {

namespace fs = std::filesystem;

const char* to_string(Split s) {
    switch (s) {
    case Split::Train: return "train";
    case Split::Val: return "val";
    case Split::Test: return "test";
    case Split::Unassigned: return "unassigned";
    }
    return "unassigned";
}

Split split_from_string(const std::string& s) {
    if (s == "train") return Split::Train;
    if (s == "val") return Split::Val;
    if (s == "test") return Split::Test;
    if (s == "unassigned") return Split::Unassigned;
    throw DataError("unknown split '" + s + "'");
}

std::vector<int> Cohort::indices(Split s) const {
    std::vector<int> out;
    for (std::size_t i = 0; i < patients.size(); ++i) {
        if (patients[i].split == s) out.push_back(static_cast<int>(i));
    }
    return out;
}

void validate_series(const Matrix& series, const std::string& who) {
    if (series.cols() < 2) {
        throw DataError(who + ": need at least 2 ROIs, got " + std::to_string(series.cols()));
    }
    if (series.rows() < 2 * kDefaultMinWindow) {
        throw DataError(who + ": need at least " + std::to_string(2 * kDefaultMinWindow) + " timepoints, got " +
                        std::to_string(series.rows()));
    }
    for (Eigen::Index t = 0; t < series.rows(); ++t) {
        for (Eigen::Index r = 0; r < series.cols(); ++r) {
            if (!std::isfinite(series(t, r))) {
                throw DataError(who + ": non-finite value at row " + std::to_string(t + 1) + ", column " +
                                std::to_string(r + 1));
            }
        }
    }
}

// ---------------------------------------------------------------------------
// CSV / manifest I/O

Matrix read_series_csv(const fs::path& path, const std::string& patient_id) {
    std::ifstream in(path);
    if (!in) {
        throw DataError("patient " + patient_id + ": cannot open " + path.string());
    }
    std::vector<std::vector<double>> rows;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        std::vector<double> row;
        std::size_t start = 0;
        std::size_t col = 0;
        while (true) {
            ++col;
            const std::size_t end = line.find(',', start);
            std::string field = line.substr(start, end == std::string::npos ? std::string::npos : end - start);
            field.erase(0, field.find_first_not_of(" \t"));
            field.erase(field.find_last_not_of(" \t") + 1);
            double v = 0.0;
            const auto* first = field.data();
            const auto* last = field.data() + field.size();
            if (!field.empty() && *first == '+') ++first;
            auto [ptr, ec] = std::from_chars(first, last, v);
            if (field.empty() || ec != std::errc() || ptr != last) {
                throw DataError("patient " + patient_id + ": " + path.string() + " row " + std::to_string(line_no) +
                                ", column " + std::to_string(col) + ": cannot parse '" + field + "'");
            }
            if (!std::isfinite(v)) {
                throw DataError("patient " + patient_id + ": " + path.string() + " row " + std::to_string(line_no) +
                                ", column " + std::to_string(col) + ": non-finite value '" + field + "'");
            }
            row.push_back(v);
            if (end == std::string::npos) break;
            start = end + 1;
        }
        if (!rows.empty() && row.size() != rows.front().size()) {
            throw DataError("patient " + patient_id + ": " + path.string() + " row " + std::to_string(line_no) +
                            " has " + std::to_string(row.size()) + " columns, expected " +
                            std::to_string(rows.front().size()));
        }
        rows.push_back(std::move(row));
    }
    if (rows.empty()) {
        throw DataError("patient " + patient_id + ": " + path.string() + " is empty");
    }
    Matrix m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows.front().size()));
    for (std::size_t t = 0; t < rows.size(); ++t)
        for (std::size_t r = 0; r < rows[t].size(); ++r)
            m(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(r)) = rows[t][r];
    return m;
}

Cohort load_cohort(const fs::path& manifest_path) {
    std::ifstream in(manifest_path);
    if (!in) throw DataError("cannot open manifest " + manifest_path.string());
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw DataError("manifest " + manifest_path.string() + ": " + e.what());
    }
    if (!j.is_object() || !j.contains("roi_count") || !j.contains("patients") || !j["patients"].is_array()) {
        throw DataError("manifest " + manifest_path.string() + ": expected {\"roi_count\", \"patients\"}");
    }
    Cohort cohort;
    cohort.roi_count = j["roi_count"].get<int>();
    if (cohort.roi_count < 2) throw DataError("manifest: roi_count must be at least 2");
    if (j["patients"].empty()) throw DataError("empty cohort");

    const fs::path base = manifest_path.parent_path();
    std::set<std::string> seen;
    std::size_t position = 0;
    for (const auto& entry : j["patients"]) {
        const std::string where = "manifest entry " + std::to_string(position++);
        PatientRecord p;
        try {
            p.id = entry.at("id").get<std::string>();
            const auto pcd = entry.at("pcd").get<std::vector<double>>();
            if (pcd.size() != kPcdCount) {
                throw DataError("patient " + p.id + ": pcd has " + std::to_string(pcd.size()) +
                                " values, expected 7");
            }
            std::copy(pcd.begin(), pcd.end(), p.pcd.begin());
            p.label = entry.at("label").get<int>();
            p.site = entry.at("site").get<std::string>();
            if (entry.contains("split")) p.split = split_from_string(entry["split"].get<std::string>());
            fs::path csv = entry.at("csv").get<std::string>();
            if (csv.is_relative()) csv = base / csv;
            if (!seen.insert(p.id).second) throw DataError("duplicate patient id '" + p.id + "'");
            if (p.label != 0 && p.label != 1) {
                throw DataError("patient " + p.id + ": label must be 0 or 1");
            }
            for (double v : p.pcd) {
                if (!std::isfinite(v)) throw DataError("patient " + p.id + ": non-finite pcd value");
            }
            p.series = read_series_csv(csv, p.id);
        } catch (const nlohmann::json::exception& e) {
            throw DataError(where + ": " + e.what());
        }
        if (p.series.cols() != cohort.roi_count) {
            throw DataError("patient " + p.id + ": CSV has " + std::to_string(p.series.cols()) +
                            " columns, manifest roi_count is " + std::to_string(cohort.roi_count));
        }
        validate_series(p.series, "patient " + p.id);
        cohort.patients.push_back(std::move(p));
    }
    return cohort;
}

void write_cohort(const Cohort& cohort, const fs::path& dir) {
    fs::create_directories(dir);
    nlohmann::json j;
    j["roi_count"] = cohort.roi_count;
    j["patients"] = nlohmann::json::array();
    for (const auto& p : cohort.patients) {
        const std::string csv_name = p.id + ".csv";
        std::ofstream out(dir / csv_name);
        if (!out) throw Error("cannot write " + (dir / csv_name).string());
        char buf[32];
        for (Eigen::Index t = 0; t < p.series.rows(); ++t) {
            for (Eigen::Index r = 0; r < p.series.cols(); ++r) {
                auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), p.series(t, r));
                if (r) out << ',';
                out.write(buf, ptr - buf);
            }
            out << '\n';
        }
        nlohmann::json e;
        e["id"] = p.id;
        e["csv"] = csv_name;
        e["pcd"] = std::vector<double>(p.pcd.begin(), p.pcd.end());
        e["label"] = p.label;
        e["site"] = p.site;
        e["split"] = to_string(p.split);
        j["patients"].push_back(std::move(e));
    }
    std::ofstream out(dir / "manifest.json");
    if (!out) throw Error("cannot write " + (dir / "manifest.json").string());
    out << j.dump(1) << '\n';
}

// ---------------------------------------------------------------------------
// Views

std::vector<Matrix> slice_views(const Matrix& series, int n_views, int min_window) {
    if (n_views < 2) throw DataError("slice_views: n_views must be at least 2");
    const Eigen::Index window = series.rows() / n_views;
    if (window < min_window) {
        throw DataError("slice_views: window of " + std::to_string(window) + " timepoints is shorter than " +
                        std::to_string(min_window));
    }
    std::vector<Matrix> views;
    views.reserve(static_cast<std::size_t>(n_views));
    for (int v = 0; v < n_views; ++v) views.push_back(series.middleRows(v * window, window));
    return views;
}

// ---------------------------------------------------------------------------
// Synthetic cohorts

namespace {

void validate_spec(const SynthSpec& s) {
    if (s.n_patients < 4) throw DataError("synth: n_patients must be at least 4");
    if (s.n_rois < 2) throw DataError("synth: n_rois must be at least 2");
    if (s.n_timepoints < 2 * kDefaultMinWindow) throw DataError("synth: n_timepoints too small");
    if (s.n_sites < 1) throw DataError("synth: n_sites must be positive");
    if (!(s.class_ratio > 0.0 && s.class_ratio < 1.0)) throw DataError("synth: class_ratio must lie in (0, 1)");
    if (s.subtypes_per_class < 1) throw DataError("synth: subtypes_per_class must be positive");
    if (!(s.noise_level >= 0.0)) throw DataError("synth: noise_level must be non-negative");
    if (!(s.edge_density > 0.0 && s.edge_density <= 1.0)) throw DataError("synth: edge_density must lie in (0, 1]");
    if (!(s.patient_variation >= 0.0)) throw DataError("synth: patient_variation must be non-negative");
}

// Random sparse symmetric layer of signed weights with magnitude in [0.5, 1] * strength.
Matrix random_layer(int r, double density, double strength, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    Matrix w = Matrix::Zero(r, r);
    for (int a = 0; a < r; ++a) {
        for (int b = a + 1; b < r; ++b) {
            if (u(rng) < density) {
                const double mag = strength * (0.5 + 0.5 * u(rng));
                const double v = u(rng) < 0.5 ? -mag : mag;
                w(a, b) = v;
                w(b, a) = v;
            }
        }
    }
    return w;
}

// Diagonally dominant precision from symmetric off-diagonal weights.
Matrix precision_from_weights(const Matrix& w) {
    Matrix theta = -w;
    for (Eigen::Index a = 0; a < w.rows(); ++a) {
        theta(a, a) = 1.0 + w.row(a).cwiseAbs().sum();
    }
    return theta;
}

Matrix correlation_from_precision(const Matrix& theta) {
    Matrix sigma = theta.llt().solve(Matrix::Identity(theta.rows(), theta.cols()));
    const Vector d = sigma.diagonal().cwiseSqrt().cwiseInverse();
    return d.asDiagonal() * sigma * d.asDiagonal();
}

struct TemplateWeights {
    std::vector<Matrix> weights; // per template
    std::vector<SubtypeTemplate> templates;
};

TemplateWeights build_templates(const SynthSpec& s, std::mt19937_64& rng) {
    const int r = s.n_rois;
    const Matrix shared = random_layer(r, s.edge_density, 0.3, rng);
    TemplateWeights out;
    for (int label = 0; label < 2; ++label) {
        const Matrix cls = random_layer(r, s.edge_density, s.class_strength, rng);
        for (int sub = 0; sub < s.subtypes_per_class; ++sub) {
            const Matrix st = random_layer(r, s.edge_density, s.subtype_strength, rng);
            Matrix w = shared + cls + st;
            SubtypeTemplate t;
            t.label = label;
            t.subtype = sub;
            t.precision = precision_from_weights(w);
            t.correlation = correlation_from_precision(t.precision);
            out.weights.push_back(std::move(w));
            out.templates.push_back(std::move(t));
        }
    }
    return out;
}

struct PcdModel {
    double mean;
    double sd;
    double direction; // sign of the class-1 shift
};

// age, gender, handedness, IQ measure, verbal IQ, performance IQ, full4 IQ
constexpr std::array<PcdModel, kPcdCount> kPcdModels{{
    {11.5, 2.5, -1.0},
    {0.6, 0.5, 1.0},
    {0.8, 0.3, -1.0},
    {1.0, 0.4, 1.0},
    {108.0, 14.0, -1.0},
    {104.0, 14.0, -1.0},
    {107.0, 13.0, -1.0},
}};

} // namespace

std::vector<SubtypeTemplate> synth_templates(const SynthSpec& spec, std::uint64_t seed) {
    validate_spec(spec);
    std::mt19937_64 rng(seed);
    return build_templates(spec, rng).templates;
}

SynthCohort synth_cohort_detailed(const SynthSpec& spec, std::uint64_t seed) {
    validate_spec(spec);
    std::mt19937_64 rng(seed);
    TemplateWeights tw = build_templates(spec, rng);

    const int p_count = spec.n_patients;
    const int positives =
        std::clamp(static_cast<int>(std::lround(spec.class_ratio * p_count)), 1, p_count - 1);
    std::vector<int> labels(static_cast<std::size_t>(p_count), 0);
    std::fill(labels.begin(), labels.begin() + positives, 1);
    std::shuffle(labels.begin(), labels.end(), rng);

    std::normal_distribution<double> normal(0.0, 1.0);
    SynthCohort out;
    out.templates = tw.templates;
    out.cohort.roi_count = spec.n_rois;
    std::array<int, 2> seen_in_class{0, 0};
    for (int i = 0; i < p_count; ++i) {
        const int label = labels[static_cast<std::size_t>(i)];
        const int sub = seen_in_class[static_cast<std::size_t>(label)]++ % spec.subtypes_per_class;
        const int tmpl = label * spec.subtypes_per_class + sub;

        Matrix w = tw.weights[static_cast<std::size_t>(tmpl)];
        if (spec.patient_variation > 0.0) {
            for (int a = 0; a < spec.n_rois; ++a) {
                for (int b = a + 1; b < spec.n_rois; ++b) {
                    if (w(a, b) != 0.0) {
                        w(a, b) += spec.patient_variation * normal(rng);
                        w(b, a) = w(a, b);
                    }
                }
            }
        }
        const Matrix corr = correlation_from_precision(precision_from_weights(w));
        const Matrix chol = corr.llt().matrixL();

        PatientRecord p;
        char id[32];
        std::snprintf(id, sizeof(id), "sub-%04d", i + 1);
        p.id = id;
        p.label = label;
        p.site = "site" + std::to_string(i % spec.n_sites);
        Matrix z(spec.n_timepoints, spec.n_rois);
        for (Eigen::Index t = 0; t < z.rows(); ++t)
            for (Eigen::Index r = 0; r < z.cols(); ++r) z(t, r) = normal(rng);
        p.series = z * chol.transpose();
        if (spec.noise_level > 0.0) {
            for (Eigen::Index t = 0; t < z.rows(); ++t)
                for (Eigen::Index r = 0; r < z.cols(); ++r) p.series(t, r) += spec.noise_level * normal(rng);
        }
        for (int k = 0; k < kPcdCount; ++k) {
            const auto& m = kPcdModels[static_cast<std::size_t>(k)];
            const double shift = label == 1 ? m.direction * spec.pcd_shift : 0.0;
            p.pcd[static_cast<std::size_t>(k)] = m.mean + m.sd * (shift + normal(rng));
        }
        out.cohort.patients.push_back(std::move(p));
        out.subtype_of.push_back(tmpl);
    }
    return out;
}

Cohort synth_cohort(const SynthSpec& spec, std::uint64_t seed) {
    return synth_cohort_detailed(spec, seed).cohort;
}

// ---------------------------------------------------------------------------
// Splits

std::array<int, 3> cell_allocation(int n, const std::array<double, 3>& ratios) {
    std::array<int, 3> alloc{0, 0, 0};
    std::array<double, 3> frac{};
    int assigned = 0;
    for (std::size_t s = 0; s < 3; ++s) {
        const double exact = ratios[s] * n;
        alloc[s] = static_cast<int>(std::floor(exact + 1e-9));
        frac[s] = exact - alloc[s];
        assigned += alloc[s];
    }
    while (assigned < n) {
        std::size_t best = 0;
        for (std::size_t s = 1; s < 3; ++s) {
            if (frac[s] > frac[best] + 1e-12) best = s;
        }
        alloc[best] += 1;
        frac[best] = -1.0;
        ++assigned;
    }
    if (n > 0 && alloc[0] == 0) {
        const std::size_t donor = alloc[2] >= alloc[1] ? 2 : 1;
        alloc[donor] -= 1;
        alloc[0] += 1;
    }
    return alloc;
}

Cohort split_cohort(Cohort cohort, const std::array<double, 3>& ratios, std::uint64_t seed) {
    double total = 0.0;
    for (double r : ratios) {
        if (!(r >= 0.0)) throw Error("split ratios must be non-negative");
        total += r;
    }
    if (std::abs(total - 1.0) > 1e-9) throw Error("split ratios must sum to 1");
    if (!(ratios[0] > 0.0)) throw Error("split train ratio must be positive");

    std::map<std::pair<std::string, int>, std::vector<int>> cells;
    for (std::size_t i = 0; i < cohort.patients.size(); ++i) {
        const auto& p = cohort.patients[i];
        cells[{p.site, p.label}].push_back(static_cast<int>(i));
    }
    std::mt19937_64 rng(seed);
    constexpr std::array<Split, 3> order{Split::Train, Split::Val, Split::Test};
    // Cells take the difference of cumulative allocations so rounding
    // remainders alternate between cells instead of piling onto one split.
    int cumulative = 0;
    for (auto& [key, members] : cells) {
        std::shuffle(members.begin(), members.end(), rng);
        const int n = static_cast<int>(members.size());
        const auto before = cell_allocation(cumulative, ratios);
        const auto after = cell_allocation(cumulative + n, ratios);
        cumulative += n;
        std::array<int, 3> alloc{};
        for (std::size_t s = 0; s < 3; ++s) alloc[s] = after[s] - before[s];
        if (*std::min_element(alloc.begin(), alloc.end()) < 0) alloc = cell_allocation(n, ratios);
        if (n > 0 && alloc[0] == 0) {
            const std::size_t donor = alloc[2] >= alloc[1] ? 2 : 1;
            alloc[donor] -= 1;
            alloc[0] += 1;
        }
        std::size_t at = 0;
        for (std::size_t s = 0; s < 3; ++s) {
            for (int k = 0; k < alloc[s]; ++k) {
                cohort.patients[static_cast<std::size_t>(members[at++])].split = order[s];
            }
        }
        if (alloc[0] == 0 && members.size() >= 3) {
            throw Error("split: site " + key.first + ", label " + std::to_string(key.second) +
                        " has no training patient");
        }
    }
    return cohort;
}

} // namespace ccgl
