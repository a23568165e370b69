#include "ccgl/pipeline.hpp"

#include <json.hpp>

#include <charconv>
#include <fstream>
#include <map>
#include <sstream>

namespace ccgl {

namespace fs = std::filesystem;

namespace {

constexpr const char* kSplitFile = "split.json";
constexpr const char* kCglCheckpoint = "cgl_checkpoint.json";
constexpr const char* kDgcCheckpoint = "dgc_checkpoint.json";
constexpr const char* kPredictions = "predictions.csv";

std::ofstream open_out(const fs::path& p) {
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
    std::ofstream out(p);
    if (!out) throw Error("cannot write " + p.string());
    out.precision(17);
    return out;
}

void write_text(const fs::path& p, const std::string& text) {
    auto out = open_out(p);
    out << text << '\n';
}

void write_effective_config(const RunConfig& cfg, const fs::path& dir, std::optional<std::uint64_t> seed) {
    RunConfig copy = cfg;
    if (seed) copy.seeds = {*seed};
    write_text(dir / "config.json", config_to_json(copy));
}

void require_file(const fs::path& p, const std::string& stage) {
    if (!fs::exists(p)) {
        throw Error("missing " + p.string() + " (run " + stage + " first)");
    }
}

Cohort apply_split(Cohort cohort, const fs::path& dir) {
    const fs::path path = dir / kSplitFile;
    require_file(path, "ingest");
    std::ifstream in(path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw DataError(path.string() + ": " + e.what());
    }
    for (auto& p : cohort.patients) {
        if (!j.contains(p.id)) throw DataError(path.string() + ": no split for patient " + p.id);
        p.split = split_from_string(j[p.id].get<std::string>());
    }
    return cohort;
}

PopulationGraph population_from(const PreparedCohort& prep, const std::vector<Matrix>& view_embeddings) {
    PopulationGraph pop;
    const Eigen::Index p = static_cast<Eigen::Index>(prep.cohort.patients.size());
    pop.node_features.resize(p, view_embeddings.front().cols());
    for (Eigen::Index i = 0; i < p; ++i) {
        pop.node_features.row(i) = patient_embedding(view_embeddings[static_cast<std::size_t>(i)]).transpose();
        const auto& rec = prep.cohort.patients[static_cast<std::size_t>(i)];
        pop.labels.push_back(rec.label);
        pop.split.push_back(rec.split);
    }
    return pop;
}

Matrix upper_triangle_rows(const Matrix& corr) {
    const Eigen::Index r = corr.rows();
    Matrix v(1, r * (r - 1) / 2);
    Eigen::Index at = 0;
    for (Eigen::Index a = 0; a < r; ++a)
        for (Eigen::Index b = a + 1; b < r; ++b) v(0, at++) = corr(a, b);
    return v;
}

struct Prediction {
    std::string id;
    Split split;
    int label;
    double prob0;
    double prob1;
    int predicted;
};

template <typename T>
bool parse_number(const std::string& text, T& value) {
    const char* end = text.data() + text.size();
    const auto [ptr, ec] = std::from_chars(text.data(), end, value);
    return ptr == end && ec == std::errc{};
}

std::vector<Prediction> read_predictions(const fs::path& path) {
    require_file(path, "train-dgc");
    std::ifstream in(path);
    std::string line;
    std::getline(in, line); // header
    std::vector<Prediction> out;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string id, split, label, p0, p1, pred;
        std::getline(ss, id, ',');
        std::getline(ss, split, ',');
        std::getline(ss, label, ',');
        std::getline(ss, p0, ',');
        std::getline(ss, p1, ',');
        std::getline(ss, pred, ',');
        Prediction row{id, Split::Unassigned, 0, 0.0, 0.0, 0};
        bool ok = parse_number(label, row.label) && parse_number(p0, row.prob0) && parse_number(p1, row.prob1) &&
                  parse_number(pred, row.predicted);
        try {
            row.split = split_from_string(split);
        } catch (const std::exception&) {
            ok = false;
        }
        if (!ok) throw DataError(path.string() + ": malformed row '" + line + "'");
        out.push_back(std::move(row));
    }
    return out;
}

RunMetrics metrics_for(std::uint64_t seed, const std::vector<double>& scores, const std::vector<int>& preds,
                       const std::vector<int>& labels) {
    RunMetrics m;
    m.seed = seed;
    m.auc = auc(scores, labels);
    m.confusion = confusion_metrics(preds, labels, 1);
    return m;
}

} // namespace

Cohort load_source(const RunConfig& cfg) {
    if (cfg.data.manifest) return load_cohort(*cfg.data.manifest);
    return synth_cohort(cfg.data.synth, cfg.data.synth_seed);
}

PreparedCohort prepare_cohort(const RunConfig& cfg, Cohort cohort) {
    PreparedCohort prep;
    const auto train = cohort.indices(Split::Train);
    prep.scaler = PcdScaler::fit(cohort, train);
    for (const auto& p : cohort.patients) {
        const Pcd pcd = prep.scaler.transform(p.pcd);
        PatientViews views;
        for (const auto& window : slice_views(p.series, cfg.n_views, cfg.min_window)) {
            ViewGraph g;
            try {
                g = build_fc_graph(window, pcd, cfg.edge_policy);
            } catch (const Error& e) {
                throw Error("patient " + p.id + ": " + e.what());
            }
            views.push_back(prepare_graph(g, cfg.cgl.encoder.lambda_mode));
            prep.graphs_flat.push_back(std::move(g));
        }
        prep.views.push_back(std::move(views));
    }
    prep.cohort = std::move(cohort);
    return prep;
}

fs::path seed_dir(const fs::path& out, std::uint64_t seed) {
    return out / ("seed_" + std::to_string(seed));
}

void run_synth(const RunConfig& cfg, const fs::path& out) {
    const Cohort cohort = synth_cohort(cfg.data.synth, cfg.data.synth_seed);
    write_cohort(cohort, out / "cohort");
    write_effective_config(cfg, out / "cohort", std::nullopt);
}

void run_ingest(const RunConfig& cfg, const fs::path& out, std::uint64_t seed) {
    const fs::path dir = seed_dir(out, seed);
    const Cohort cohort = split_cohort(load_source(cfg), cfg.split_ratios, seed);
    // Building the graphs validates every window before training starts.
    const PreparedCohort prep = prepare_cohort(cfg, cohort);
    nlohmann::ordered_json j;
    for (const auto& p : prep.cohort.patients) j[p.id] = to_string(p.split);
    write_text(dir / kSplitFile, j.dump(1));

    nlohmann::ordered_json summary;
    summary["patients"] = prep.cohort.patients.size();
    summary["roi_count"] = prep.cohort.roi_count;
    summary["n_views"] = cfg.n_views;
    for (Split s : {Split::Train, Split::Val, Split::Test}) {
        const auto rows = prep.cohort.indices(s);
        int pos = 0;
        for (int r : rows) pos += prep.cohort.patients[static_cast<std::size_t>(r)].label;
        summary["splits"][to_string(s)] = {{"count", rows.size()}, {"label1", pos}};
    }
    write_text(dir / "cohort_summary.json", summary.dump(1));
    write_effective_config(cfg, dir, seed);
}

void run_train_cgl(const RunConfig& cfg, const fs::path& out, std::uint64_t seed) {
    const fs::path dir = seed_dir(out, seed);
    const PreparedCohort prep = prepare_cohort(cfg, apply_split(load_source(cfg), dir));
    const auto train = prep.cohort.indices(Split::Train);
    const CglResult result = train_cgl(prep.views, train, cfg.cgl, seed);
    save_checkpoint(result.params, dir / kCglCheckpoint);
    {
        auto csv = open_out(dir / "cgl_history.csv");
        csv << "epoch,loss,mean_homo,mean_heter\n";
        for (const auto& e : result.history) {
            csv << e.epoch << ',' << e.loss << ',' << e.mean_homo << ',' << e.mean_heter << '\n';
        }
    }

    const auto embeddings = embed_views(prep.views, result.params, cfg.cgl.encoder);
    Matrix all_views(static_cast<Eigen::Index>(prep.graphs_flat.size()), cfg.cgl.encoder.embedding_dim);
    Matrix raw_views;
    std::vector<std::pair<int, int>> pairing;
    Eigen::Index row = 0;
    for (std::size_t i = 0; i < embeddings.size(); ++i) {
        for (Eigen::Index v = 0; v < embeddings[i].rows(); ++v) {
            all_views.row(row) = embeddings[i].row(v);
            const Matrix raw = upper_triangle_rows(
                prep.graphs_flat[static_cast<std::size_t>(row)].node_features.leftCols(prep.cohort.roi_count));
            if (raw_views.size() == 0) raw_views.resize(all_views.rows(), raw.cols());
            raw_views.row(row) = raw.row(0);
            pairing.emplace_back(static_cast<int>(i), static_cast<int>(v));
            ++row;
        }
    }
    write_attraction_csv(attraction_stats(similarity_matrix(all_views, pairing)), dir, "attraction_cgl");
    write_attraction_csv(attraction_stats(similarity_matrix(raw_views, pairing)), dir, "attraction_raw");

    auto csv = open_out(dir / "embeddings.csv");
    csv << "patient_id";
    for (int k = 0; k < cfg.cgl.encoder.embedding_dim; ++k) csv << ",e" << k;
    csv << '\n';
    for (std::size_t i = 0; i < embeddings.size(); ++i) {
        const Vector e = patient_embedding(embeddings[i]);
        csv << prep.cohort.patients[i].id;
        for (Eigen::Index k = 0; k < e.size(); ++k) csv << ',' << e(k);
        csv << '\n';
    }
    write_effective_config(cfg, dir, seed);
}

void run_train_dgc(const RunConfig& cfg, const fs::path& out, std::uint64_t seed) {
    const fs::path dir = seed_dir(out, seed);
    require_file(dir / kCglCheckpoint, "train-cgl");
    const ParamStore encoder = load_checkpoint(dir / kCglCheckpoint);
    const PreparedCohort prep = prepare_cohort(cfg, apply_split(load_source(cfg), dir));
    const PopulationGraph pop = population_from(prep, embed_views(prep.views, encoder, cfg.cgl.encoder));

    const DgcResult result = train_dgc(pop, cfg.dgc, seed);
    save_checkpoint(result.params, dir / kDgcCheckpoint);
    {
        auto csv = open_out(dir / "dgc_history.csv");
        csv << "epoch,train_loss,val_loss,val_auc\n";
        for (const auto& e : result.history) {
            csv << e.epoch << ',' << e.train_loss << ',' << e.val_loss << ',';
            if (e.val_auc) csv << *e.val_auc;
            csv << '\n';
        }
    }
    const Matrix probs = dgc_probabilities(pop, result.params, cfg.dgc);
    auto csv = open_out(dir / kPredictions);
    csv << "patient_id,split,label,prob_class0,prob_class1,predicted\n";
    for (Eigen::Index i = 0; i < probs.rows(); ++i) {
        const auto& p = prep.cohort.patients[static_cast<std::size_t>(i)];
        csv << p.id << ',' << to_string(p.split) << ',' << p.label << ',' << probs(i, 0) << ',' << probs(i, 1) << ','
            << (probs(i, 1) >= probs(i, 0) ? 1 : 0) << '\n';
    }
    write_effective_config(cfg, dir, seed);
}

EvaluationResult run_evaluate(const RunConfig& cfg, const fs::path& out, std::uint64_t seed) {
    const fs::path dir = seed_dir(out, seed);
    const auto predictions = read_predictions(dir / kPredictions);
    std::vector<double> scores;
    std::vector<int> preds, labels;
    for (const auto& p : predictions) {
        if (p.split != Split::Test) continue;
        scores.push_back(p.prob1);
        preds.push_back(p.predicted);
        labels.push_back(p.label);
    }
    if (labels.empty()) throw Error("evaluate: no test patients in " + (dir / kPredictions).string());

    EvaluationResult result;
    result.model = metrics_for(seed, scores, preds, labels);

    const Cohort cohort = apply_split(load_source(cfg), dir);
    const auto train = cohort.indices(Split::Train);
    const auto test = cohort.indices(Split::Test);
    const PcdScaler scaler = PcdScaler::fit(cohort, train);
    const Matrix features = raw_fc_features(cohort, scaler);
    Matrix train_x(static_cast<Eigen::Index>(train.size()), features.cols());
    Matrix test_x(static_cast<Eigen::Index>(test.size()), features.cols());
    std::vector<int> train_y, test_y;
    for (std::size_t i = 0; i < train.size(); ++i) {
        train_x.row(static_cast<Eigen::Index>(i)) = features.row(train[i]);
        train_y.push_back(cohort.patients[static_cast<std::size_t>(train[i])].label);
    }
    for (std::size_t i = 0; i < test.size(); ++i) {
        test_x.row(static_cast<Eigen::Index>(i)) = features.row(test[i]);
        test_y.push_back(cohort.patients[static_cast<std::size_t>(test[i])].label);
    }
    const int k = std::min<int>(cfg.knn_baseline_k, static_cast<int>(train.size()));
    const KnnBaselineResult knn = knn_baseline(train_x, train_y, test_x, k);
    result.knn = metrics_for(seed, knn.scores, knn.predictions, test_y);

    write_text(dir / "metrics.json", metrics_json(summarize_runs({result.model})));
    write_text(dir / "knn_metrics.json", metrics_json(summarize_runs({result.knn})));
    write_effective_config(cfg, dir, seed);
    return result;
}

void run_export_graph(const RunConfig& cfg, const fs::path& out, std::uint64_t seed) {
    const fs::path dir = seed_dir(out, seed);
    require_file(dir / kCglCheckpoint, "train-cgl");
    require_file(dir / kDgcCheckpoint, "train-dgc");
    const ParamStore encoder = load_checkpoint(dir / kCglCheckpoint);
    const ParamStore dgc = load_checkpoint(dir / kDgcCheckpoint);
    const PreparedCohort prep = prepare_cohort(cfg, apply_split(load_source(cfg), dir));
    const PopulationGraph pop = population_from(prep, embed_views(prep.views, encoder, cfg.cgl.encoder));

    Tape tape(dgc);
    const Matrix hidden = dgc_forward(tape, pop.node_features, cfg.dgc).hidden.value();
    const Matrix raw = raw_fc_features(prep.cohort, prep.scaler);

    std::vector<PopulationNode> nodes;
    for (const auto& p : prep.cohort.patients) nodes.push_back({p.id, p.label, p.split});
    const std::vector<std::pair<std::string, const Matrix*>> sets{
        {"raw", &raw}, {"cgl", &pop.node_features}, {"dgc", &hidden}};
    for (const auto& [name, features] : sets) {
        for (GraphFormat f : cfg.export_formats) {
            const std::string ext = f == GraphFormat::Dot ? ".dot" : ".graphml";
            export_population_graph(*features, nodes, dir / ("population_" + name + ext), f);
        }
    }
    write_effective_config(cfg, dir, seed);
}

PipelineReport run_pipeline(const RunConfig& cfg, const fs::path& out) {
    std::vector<RunMetrics> model_runs, knn_runs;
    for (std::uint64_t seed : cfg.seeds) {
        run_ingest(cfg, out, seed);
        run_train_cgl(cfg, out, seed);
        run_train_dgc(cfg, out, seed);
        const EvaluationResult r = run_evaluate(cfg, out, seed);
        run_export_graph(cfg, out, seed);
        model_runs.push_back(r.model);
        knn_runs.push_back(r.knn);
    }
    PipelineReport report{summarize_runs(std::move(model_runs)), summarize_runs(std::move(knn_runs))};
    write_text(out / "metrics.json", metrics_json(report.model));
    write_text(out / "knn_metrics.json", metrics_json(report.knn));
    write_effective_config(cfg, out, std::nullopt);
    return report;
}

} // namespace ccgl
