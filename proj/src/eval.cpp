#include "ccgl/eval.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

namespace ccgl {

namespace fs = std::filesystem;

double auc(std::span<const double> scores, std::span<const int> labels) {
    if (scores.size() != labels.size()) throw Error("auc: scores and labels differ in length");
    // Rank-sum form of the pair count; tied scores share their mean rank,
    // which credits each tied (positive, negative) pair with one half.
    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
    double positives = 0.0;
    for (int y : labels) {
        if (y != 0 && y != 1) throw Error("auc: labels must be 0 or 1");
        positives += y;
    }
    const double negatives = static_cast<double>(labels.size()) - positives;
    if (positives == 0.0 || negatives == 0.0) throw Error("auc: both classes must be present");

    // Ranks are doubled so tie groups stay in exact integer arithmetic.
    long long doubled_rank_sum = 0;
    std::size_t i = 0;
    while (i < order.size()) {
        std::size_t j = i;
        while (j + 1 < order.size() && scores[order[j + 1]] == scores[order[i]]) ++j;
        const long long doubled_mean_rank = static_cast<long long>(i + j + 2);
        for (std::size_t t = i; t <= j; ++t) {
            if (labels[order[t]] == 1) doubled_rank_sum += doubled_mean_rank;
        }
        i = j + 1;
    }
    const long long pos = static_cast<long long>(positives);
    const long long doubled_u = doubled_rank_sum - pos * (pos + 1);
    return static_cast<double>(doubled_u) / (2.0 * positives * negatives);
}

Confusion confusion_metrics(std::span<const int> predictions, std::span<const int> labels, int positive_class) {
    if (predictions.empty()) throw Error("confusion_metrics: empty input");
    if (predictions.size() != labels.size()) throw Error("confusion_metrics: length mismatch");
    Confusion c;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        const bool truth = labels[i] == positive_class;
        const bool pred = predictions[i] == positive_class;
        if (truth && pred) ++c.tp;
        else if (!truth && pred) ++c.fp;
        else if (!truth && !pred) ++c.tn;
        else ++c.fn;
    }
    const int total = c.tp + c.fp + c.tn + c.fn;
    c.acc = static_cast<double>(c.tp + c.tn) / total;
    if (c.tp + c.fn > 0) c.sen = static_cast<double>(c.tp) / (c.tp + c.fn);
    if (c.tn + c.fp > 0) c.spec = static_cast<double>(c.tn) / (c.tn + c.fp);
    return c;
}

namespace {

MetricSummary summarize(const std::vector<double>& values) {
    MetricSummary s;
    s.defined_runs = static_cast<int>(values.size());
    if (values.empty()) return s;
    const double n = static_cast<double>(values.size());
    s.mean = std::accumulate(values.begin(), values.end(), 0.0) / n;
    double ss = 0.0;
    for (double v : values) ss += (v - s.mean) * (v - s.mean);
    s.std = std::sqrt(ss / n);
    return s;
}

nlohmann::json optional_json(const std::optional<double>& v) {
    return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
}

} // namespace

MetricsReport summarize_runs(std::vector<RunMetrics> runs) {
    MetricsReport r;
    std::vector<double> auc_v, acc_v, sen_v, spec_v;
    for (const auto& run : runs) {
        auc_v.push_back(run.auc);
        if (run.confusion.acc) acc_v.push_back(*run.confusion.acc);
        if (run.confusion.sen) sen_v.push_back(*run.confusion.sen);
        if (run.confusion.spec) spec_v.push_back(*run.confusion.spec);
    }
    r.auc = summarize(auc_v);
    r.acc = summarize(acc_v);
    r.sen = summarize(sen_v);
    r.spec = summarize(spec_v);
    r.runs = std::move(runs);
    return r;
}

std::string metrics_json(const MetricsReport& report) {
    nlohmann::ordered_json j;
    j["runs"] = nlohmann::ordered_json::array();
    for (const auto& run : report.runs) {
        nlohmann::ordered_json e;
        e["seed"] = run.seed;
        e["auc"] = run.auc;
        e["acc"] = optional_json(run.confusion.acc);
        e["sen"] = optional_json(run.confusion.sen);
        e["spec"] = optional_json(run.confusion.spec);
        e["tp"] = run.confusion.tp;
        e["fp"] = run.confusion.fp;
        e["tn"] = run.confusion.tn;
        e["fn"] = run.confusion.fn;
        j["runs"].push_back(std::move(e));
    }
    const auto block = [&](auto field) {
        nlohmann::ordered_json b;
        b["auc"] = field(report.auc);
        b["acc"] = field(report.acc);
        b["sen"] = field(report.sen);
        b["spec"] = field(report.spec);
        return b;
    };
    j["mean"] = block([](const MetricSummary& s) { return s.mean; });
    j["std"] = block([](const MetricSummary& s) { return s.std; });
    return j.dump(2);
}

// ---------------------------------------------------------------------------
// Attraction statistics

namespace {

double quantile(const std::vector<double>& sorted, double q) {
    if (sorted.empty()) return 0.0;
    const double pos = q * static_cast<double>(sorted.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
    const double frac = pos - static_cast<double>(lo);
    return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

} // namespace

DistributionSummary summarize_distribution(std::vector<double> values) {
    DistributionSummary s;
    s.histogram.assign(kHistogramBins, 0);
    s.count = values.size();
    if (values.empty()) return s;
    std::sort(values.begin(), values.end());
    const double n = static_cast<double>(values.size());
    s.mean = std::accumulate(values.begin(), values.end(), 0.0) / n;
    double ss = 0.0;
    for (double v : values) ss += (v - s.mean) * (v - s.mean);
    s.std = std::sqrt(ss / n);
    s.min = values.front();
    s.max = values.back();
    s.q1 = quantile(values, 0.25);
    s.median = quantile(values, 0.5);
    s.q3 = quantile(values, 0.75);
    for (double v : values) {
        int bin = static_cast<int>(std::floor((v + 1.0) / 2.0 * kHistogramBins));
        bin = std::clamp(bin, 0, kHistogramBins - 1);
        ++s.histogram[static_cast<std::size_t>(bin)];
    }
    return s;
}

AttractionStats attraction_stats(const AttractionMatrix& m) {
    const Eigen::Index n = m.values.rows();
    if (static_cast<Eigen::Index>(m.pairing.size()) != n) {
        throw ShapeError("attraction_stats: pairing does not match the matrix");
    }
    AttractionStats s;
    for (Eigen::Index a = 0; a < n; ++a) {
        for (Eigen::Index b = 0; b < n; ++b) {
            if (a == b) continue;
            if (m.pairing[static_cast<std::size_t>(a)].first == m.pairing[static_cast<std::size_t>(b)].first) {
                s.homo.push_back(m.values(a, b));
            } else {
                s.heter.push_back(m.values(a, b));
            }
        }
    }
    s.homo_summary = summarize_distribution(s.homo);
    s.heter_summary = summarize_distribution(s.heter);
    return s;
}

void write_attraction_csv(const AttractionStats& stats, const fs::path& dir, const std::string& stem) {
    fs::create_directories(dir);
    const auto open = [](const fs::path& p) {
        std::ofstream out(p);
        if (!out) throw Error("cannot write " + p.string());
        out.precision(17);
        return out;
    };
    {
        auto out = open(dir / (stem + ".csv"));
        out << "pair_type,value\n";
        for (double v : stats.homo) out << "homo," << v << '\n';
        for (double v : stats.heter) out << "heter," << v << '\n';
    }
    {
        auto out = open(dir / (stem + "_hist.csv"));
        out << "pair_type,bin_lo,bin_hi,count\n";
        const auto emit = [&](const char* type, const DistributionSummary& s) {
            for (int b = 0; b < kHistogramBins; ++b) {
                const double lo = -1.0 + 2.0 * b / kHistogramBins;
                const double hi = -1.0 + 2.0 * (b + 1) / kHistogramBins;
                out << type << ',' << lo << ',' << hi << ',' << s.histogram[static_cast<std::size_t>(b)] << '\n';
            }
        };
        emit("homo", stats.homo_summary);
        emit("heter", stats.heter_summary);
    }
    {
        auto out = open(dir / (stem + "_summary.csv"));
        out << "pair_type,count,mean,std,min,q1,median,q3,max\n";
        const auto emit = [&](const char* type, const DistributionSummary& s) {
            out << type << ',' << s.count << ',' << s.mean << ',' << s.std << ',' << s.min << ',' << s.q1 << ','
                << s.median << ',' << s.q3 << ',' << s.max << '\n';
        };
        emit("homo", stats.homo_summary);
        emit("heter", stats.heter_summary);
    }
}

// ---------------------------------------------------------------------------
// Population graph export

namespace {

std::string xml_escape(const std::string& s) {
    std::string out;
    for (char c : s) {
        switch (c) {
        case '&': out += "&amp;"; break;
        case '<': out += "&lt;"; break;
        case '>': out += "&gt;"; break;
        case '"': out += "&quot;"; break;
        case '\'': out += "&apos;"; break;
        default: out += c;
        }
    }
    return out;
}

std::string dot_quote(const std::string& s) {
    std::string out = "\"";
    for (char c : s) {
        if (c == '"' || c == '\\') out += '\\';
        out += c;
    }
    return out + "\"";
}

} // namespace

void export_population_graph(const Matrix& features, std::span<const PopulationNode> nodes, const fs::path& out_path,
                             GraphFormat format) {
    const Eigen::Index p = features.rows();
    if (p < 3) throw Error("export_population_graph: need at least 3 patients");
    if (static_cast<Eigen::Index>(nodes.size()) != p) throw ShapeError("export_population_graph: node count mismatch");
    const EdgeList edges = knn_edges(features, 2);

    if (out_path.has_parent_path()) fs::create_directories(out_path.parent_path());
    std::ofstream out(out_path);
    if (!out) throw Error("cannot write " + out_path.string());
    out.precision(17);
    if (format == GraphFormat::Dot) {
        out << "digraph population {\n";
        for (Eigen::Index i = 0; i < p; ++i) {
            const auto& n = nodes[static_cast<std::size_t>(i)];
            out << "  n" << i << " [id=" << dot_quote(n.id) << ", label=" << n.label
                << ", split=" << dot_quote(to_string(n.split)) << "];\n";
        }
        for (const auto& e : edges) {
            out << "  n" << e.src << " -> n" << e.dst
                << " [distance=" << (features.row(e.src) - features.row(e.dst)).norm() << "];\n";
        }
        out << "}\n";
    } else {
        out << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
            << "<graphml xmlns=\"http://graphml.graphdrawing.org/xmlns\">\n"
            << "  <key id=\"id\" for=\"node\" attr.name=\"id\" attr.type=\"string\"/>\n"
            << "  <key id=\"label\" for=\"node\" attr.name=\"label\" attr.type=\"int\"/>\n"
            << "  <key id=\"split\" for=\"node\" attr.name=\"split\" attr.type=\"string\"/>\n"
            << "  <key id=\"distance\" for=\"edge\" attr.name=\"distance\" attr.type=\"double\"/>\n"
            << "  <graph id=\"population\" edgedefault=\"directed\">\n";
        for (Eigen::Index i = 0; i < p; ++i) {
            const auto& n = nodes[static_cast<std::size_t>(i)];
            out << "    <node id=\"n" << i << "\">"
                << "<data key=\"id\">" << xml_escape(n.id) << "</data>"
                << "<data key=\"label\">" << n.label << "</data>"
                << "<data key=\"split\">" << to_string(n.split) << "</data></node>\n";
        }
        for (std::size_t e = 0; e < edges.size(); ++e) {
            out << "    <edge id=\"e" << e << "\" source=\"n" << edges[e].src << "\" target=\"n" << edges[e].dst
                << "\"><data key=\"distance\">"
                << (features.row(edges[e].src) - features.row(edges[e].dst)).norm() << "</data></edge>\n";
        }
        out << "  </graph>\n</graphml>\n";
    }
    if (!out) throw Error("failed writing " + out_path.string());
}

// ---------------------------------------------------------------------------
// KNN baseline

KnnBaselineResult knn_baseline(const Matrix& train_features, std::span<const int> train_labels,
                               const Matrix& test_features, int k) {
    const Eigen::Index n = train_features.rows();
    if (n == 0) throw Error("knn_baseline: empty training set");
    if (static_cast<Eigen::Index>(train_labels.size()) != n) throw ShapeError("knn_baseline: label count mismatch");
    if (k < 1 || k > n) throw Error("knn_baseline: k must lie in [1, train size]");
    if (test_features.cols() != train_features.cols()) throw ShapeError("knn_baseline: feature width mismatch");
    KnnBaselineResult r;
    std::vector<std::pair<double, int>> dist(static_cast<std::size_t>(n));
    for (Eigen::Index t = 0; t < test_features.rows(); ++t) {
        for (Eigen::Index i = 0; i < n; ++i) {
            dist[static_cast<std::size_t>(i)] = {(test_features.row(t) - train_features.row(i)).squaredNorm(),
                                                 static_cast<int>(i)};
        }
        std::partial_sort(dist.begin(), dist.begin() + k, dist.end());
        int positives = 0;
        for (int j = 0; j < k; ++j) positives += train_labels[static_cast<std::size_t>(dist[static_cast<std::size_t>(j)].second)];
        r.scores.push_back(static_cast<double>(positives) / k);
        r.predictions.push_back(2 * positives >= k ? 1 : 0);
    }
    return r;
}

Matrix raw_fc_features(const Cohort& cohort, const PcdScaler& scaler) {
    const int r = cohort.roi_count;
    const int tri = r * (r - 1) / 2;
    Matrix out(static_cast<Eigen::Index>(cohort.patients.size()), tri + kPcdCount);
    for (std::size_t i = 0; i < cohort.patients.size(); ++i) {
        const Matrix corr = pearson_matrix(cohort.patients[i].series);
        Eigen::Index at = 0;
        for (int a = 0; a < r; ++a)
            for (int b = a + 1; b < r; ++b) out(static_cast<Eigen::Index>(i), at++) = corr(a, b);
        const Pcd z = scaler.transform(cohort.patients[i].pcd);
        for (int k = 0; k < kPcdCount; ++k) out(static_cast<Eigen::Index>(i), at++) = z[static_cast<std::size_t>(k)];
    }
    return out;
}

} // namespace ccgl
