#include "ccgl/config.hpp"

#include <json.hpp>

#include <fstream>
#include <set>
#include <sstream>

namespace ccgl {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

// Walks one JSON object, remembering which keys were consumed so leftovers
// can be reported with their full path.
class ObjectReader {
public:
    ObjectReader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
        if (!j_.is_object()) fail(path_.empty() ? "<root>" : path_, "expected an object");
    }

    std::string field(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

    bool has(const std::string& key) const { return j_.contains(key); }

    template <typename T>
    void read(const std::string& key, T& out) {
        if (!j_.contains(key)) return;
        used_.insert(key);
        try {
            out = j_.at(key).get<T>();
        } catch (const json::exception&) {
            fail(field(key), "wrong type");
        }
    }

    const json& child(const std::string& key) {
        used_.insert(key);
        return j_.at(key);
    }

    void finish() const {
        for (const auto& [key, _] : j_.items()) {
            if (!used_.count(key)) fail(field(key), "unknown field");
        }
    }

    [[noreturn]] static void fail(const std::string& where, const std::string& what) {
        throw ValidationError(where + ": " + what);
    }

private:
    const json& j_;
    std::string path_;
    std::set<std::string> used_;
};

void require(bool ok, const std::string& where, const std::string& what) {
    if (!ok) ObjectReader::fail(where, what);
}

LambdaMode lambda_mode_from(const std::string& s, const std::string& where) {
    if (s == "power") return LambdaMode::PowerIteration;
    if (s == "fixed2") return LambdaMode::FixedTwo;
    ObjectReader::fail(where, "expected \"power\" or \"fixed2\"");
}

const char* lambda_mode_name(LambdaMode m) {
    return m == LambdaMode::FixedTwo ? "fixed2" : "power";
}

Aggregation aggregation_from(const std::string& s, const std::string& where) {
    if (s == "sum") return Aggregation::Sum;
    if (s == "max") return Aggregation::Max;
    ObjectReader::fail(where, "expected \"sum\" or \"max\"");
}

GraphFormat format_from(const std::string& s, const std::string& where) {
    if (s == "dot") return GraphFormat::Dot;
    if (s == "graphml") return GraphFormat::GraphMl;
    ObjectReader::fail(where, "expected \"dot\" or \"graphml\"");
}

void read_synth(const json& j, SynthSpec& s, std::uint64_t& seed, const std::string& path) {
    ObjectReader r(j, path);
    r.read("n_patients", s.n_patients);
    r.read("n_rois", s.n_rois);
    r.read("n_timepoints", s.n_timepoints);
    r.read("n_sites", s.n_sites);
    r.read("class_ratio", s.class_ratio);
    r.read("subtypes_per_class", s.subtypes_per_class);
    r.read("noise_level", s.noise_level);
    r.read("edge_density", s.edge_density);
    r.read("class_strength", s.class_strength);
    r.read("subtype_strength", s.subtype_strength);
    r.read("patient_variation", s.patient_variation);
    r.read("pcd_shift", s.pcd_shift);
    r.read("seed", seed);
    r.finish();
}

} // namespace

void validate_config(const RunConfig& c) {
    if (!c.data.manifest) {
        const auto& s = c.data.synth;
        require(s.n_patients >= 4, "data.synth.n_patients", "must be at least 4");
        require(s.n_rois >= 2, "data.synth.n_rois", "must be at least 2");
        require(s.n_timepoints >= 2 * c.min_window, "data.synth.n_timepoints", "must be at least 2 * min_window");
        require(s.n_sites >= 1, "data.synth.n_sites", "must be positive");
        require(s.class_ratio > 0.0 && s.class_ratio < 1.0, "data.synth.class_ratio", "must lie in (0, 1)");
        require(s.subtypes_per_class >= 1, "data.synth.subtypes_per_class", "must be positive");
        require(s.noise_level >= 0.0, "data.synth.noise_level", "must be non-negative");
        require(s.edge_density > 0.0 && s.edge_density <= 1.0, "data.synth.edge_density", "must lie in (0, 1]");
        require(s.class_strength >= 0.0, "data.synth.class_strength", "must be non-negative");
        require(s.subtype_strength >= 0.0, "data.synth.subtype_strength", "must be non-negative");
        require(s.patient_variation >= 0.0, "data.synth.patient_variation", "must be non-negative");
    }
    require(c.n_views >= 2, "n_views", "must be at least 2");
    require(c.min_window >= 3, "min_window", "must be at least 3");
    require(c.edge_policy.per_node_top >= 0, "edge_policy.per_node_top", "must be non-negative");
    require(c.edge_policy.shrinkage >= 0.0 && c.edge_policy.shrinkage <= 1.0, "edge_policy.shrinkage",
            "must lie in [0, 1]");
    const auto& e = c.cgl.encoder;
    require(!e.hidden.empty(), "encoder.hidden", "must list at least one width");
    for (int w : e.hidden) require(w >= 1, "encoder.hidden", "widths must be positive");
    require(e.embedding_dim >= 1, "encoder.embedding_dim", "must be positive");
    require(e.cheb_order >= 1, "encoder.cheb_order", "must be positive");
    require(e.pool_ratio > 0.0 && e.pool_ratio <= 1.0, "encoder.pool_ratio", "must lie in (0, 1]");
    require(c.cgl.tau > 0.0, "cgl.tau", "must be positive");
    require(c.cgl.batch_size >= 1, "cgl.batch_size", "must be positive");
    require(c.cgl.epochs >= 0, "cgl.epochs", "must be non-negative");
    require(c.cgl.lr >= 0.0, "cgl.lr", "must be non-negative");
    require(c.dgc.k >= 1, "dgc.k", "must be positive");
    require(c.dgc.gamma >= 0.0, "dgc.gamma", "must be non-negative");
    require(!c.dgc.hidden.empty(), "dgc.hidden", "must list at least one width");
    for (int w : c.dgc.hidden) require(w >= 1, "dgc.hidden", "widths must be positive");
    require(c.dgc.epochs >= 1, "dgc.epochs", "must be positive");
    require(c.dgc.lr >= 0.0, "dgc.lr", "must be non-negative");
    double total = 0.0;
    for (double r : c.split_ratios) {
        require(r >= 0.0, "split_ratios", "entries must be non-negative");
        total += r;
    }
    require(std::abs(total - 1.0) < 1e-9, "split_ratios", "must sum to 1");
    require(c.split_ratios[0] > 0.0, "split_ratios", "train share must be positive");
    require(!c.seeds.empty(), "seeds", "must list at least one seed");
    require(c.knn_baseline_k >= 1, "knn_baseline_k", "must be positive");
    require(!c.output_dir.empty(), "output_dir", "must not be empty");
}

RunConfig parse_config(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw ValidationError(std::string("<root>: invalid JSON: ") + e.what());
    }
    RunConfig c;
    ObjectReader root(j, "");
    if (root.has("data")) {
        ObjectReader d(root.child("data"), "data");
        std::string manifest;
        if (d.has("manifest") && !d.child("manifest").is_null()) {
            d.read("manifest", manifest);
            c.data.manifest = manifest;
        }
        if (d.has("synth")) read_synth(d.child("synth"), c.data.synth, c.data.synth_seed, "data.synth");
        d.finish();
    }
    root.read("n_views", c.n_views);
    root.read("min_window", c.min_window);
    if (root.has("edge_policy")) {
        ObjectReader r(root.child("edge_policy"), "edge_policy");
        r.read("per_node_top", c.edge_policy.per_node_top);
        r.read("shrinkage", c.edge_policy.shrinkage);
        r.finish();
    }
    if (root.has("encoder")) {
        ObjectReader r(root.child("encoder"), "encoder");
        auto& e = c.cgl.encoder;
        r.read("hidden", e.hidden);
        r.read("embedding_dim", e.embedding_dim);
        r.read("cheb_order", e.cheb_order);
        r.read("pool_ratio", e.pool_ratio);
        std::string mode = lambda_mode_name(e.lambda_mode);
        r.read("lambda_max_mode", mode);
        e.lambda_mode = lambda_mode_from(mode, r.field("lambda_max_mode"));
        r.finish();
    }
    if (root.has("cgl")) {
        ObjectReader r(root.child("cgl"), "cgl");
        r.read("tau", c.cgl.tau);
        r.read("batch_size", c.cgl.batch_size);
        r.read("epochs", c.cgl.epochs);
        r.read("lr", c.cgl.lr);
        r.finish();
    }
    if (root.has("dgc")) {
        ObjectReader r(root.child("dgc"), "dgc");
        r.read("k", c.dgc.k);
        r.read("gamma", c.dgc.gamma);
        r.read("hidden", c.dgc.hidden);
        std::string agg = c.dgc.aggregation == Aggregation::Max ? "max" : "sum";
        r.read("aggregation", agg);
        c.dgc.aggregation = aggregation_from(agg, r.field("aggregation"));
        r.read("epochs", c.dgc.epochs);
        r.read("lr", c.dgc.lr);
        r.finish();
    }
    root.read("split_ratios", c.split_ratios);
    root.read("seeds", c.seeds);
    root.read("knn_baseline_k", c.knn_baseline_k);
    if (root.has("export_formats")) {
        std::vector<std::string> names;
        root.read("export_formats", names);
        c.export_formats.clear();
        for (const auto& n : names) c.export_formats.push_back(format_from(n, "export_formats"));
    }
    std::string out = c.output_dir.string();
    root.read("output_dir", out);
    c.output_dir = out;
    root.finish();
    validate_config(c);
    return c;
}

RunConfig load_config(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("config: cannot open " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    RunConfig c = parse_config(ss.str());
    if (c.data.manifest && c.data.manifest->is_relative()) {
        c.data.manifest = fs::absolute(path).parent_path() / *c.data.manifest;
    }
    return c;
}

std::string config_to_json(const RunConfig& c) {
    nlohmann::ordered_json j;
    j["data"]["manifest"] = c.data.manifest ? nlohmann::ordered_json(c.data.manifest->string()) : nullptr;
    const auto& s = c.data.synth;
    j["data"]["synth"] = {{"n_patients", s.n_patients},
                          {"n_rois", s.n_rois},
                          {"n_timepoints", s.n_timepoints},
                          {"n_sites", s.n_sites},
                          {"class_ratio", s.class_ratio},
                          {"subtypes_per_class", s.subtypes_per_class},
                          {"noise_level", s.noise_level},
                          {"edge_density", s.edge_density},
                          {"class_strength", s.class_strength},
                          {"subtype_strength", s.subtype_strength},
                          {"patient_variation", s.patient_variation},
                          {"pcd_shift", s.pcd_shift},
                          {"seed", c.data.synth_seed}};
    j["n_views"] = c.n_views;
    j["min_window"] = c.min_window;
    j["edge_policy"] = {{"per_node_top", c.edge_policy.per_node_top}, {"shrinkage", c.edge_policy.shrinkage}};
    const auto& e = c.cgl.encoder;
    j["encoder"] = {{"hidden", e.hidden},
                    {"embedding_dim", e.embedding_dim},
                    {"cheb_order", e.cheb_order},
                    {"pool_ratio", e.pool_ratio},
                    {"lambda_max_mode", lambda_mode_name(e.lambda_mode)}};
    j["cgl"] = {{"tau", c.cgl.tau}, {"batch_size", c.cgl.batch_size}, {"epochs", c.cgl.epochs}, {"lr", c.cgl.lr}};
    j["dgc"] = {{"k", c.dgc.k},
                {"gamma", c.dgc.gamma},
                {"hidden", c.dgc.hidden},
                {"aggregation", c.dgc.aggregation == Aggregation::Max ? "max" : "sum"},
                {"epochs", c.dgc.epochs},
                {"lr", c.dgc.lr}};
    j["split_ratios"] = c.split_ratios;
    j["seeds"] = c.seeds;
    j["knn_baseline_k"] = c.knn_baseline_k;
    std::vector<std::string> formats;
    for (auto f : c.export_formats) formats.push_back(f == GraphFormat::Dot ? "dot" : "graphml");
    j["export_formats"] = formats;
    j["output_dir"] = c.output_dir.string();
    return j.dump(2);
}

} // namespace ccgl
