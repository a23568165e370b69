#ifndef CCGL_CONFIG_HPP
#define CCGL_CONFIG_HPP

#include "ccgl/cgl_encoder.hpp"
#include "ccgl/dgc_classifier.hpp"
#include "ccgl/eval.hpp"
#include "ccgl/fc_graph.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace ccgl {

struct DataSource {
    std::optional<std::filesystem::path> manifest; ///< Takes precedence over synth when set.
    SynthSpec synth;
    std::uint64_t synth_seed = 7;
};

/// Every tunable of a run. Defaults follow the published settings where
/// they exist (batch 100, 150 epochs, lr 0.001 / 0.005, tau 0.1, K 3,
/// 20 neighbours, 7:1:2 splits).
struct RunConfig {
    DataSource data;
    int n_views = 2;
    int min_window = kDefaultMinWindow;
    EdgePolicy edge_policy;
    CglConfig cgl;
    DgcConfig dgc;
    std::array<double, 3> split_ratios{0.7, 0.1, 0.2};
    std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
    int knn_baseline_k = 9;
    std::vector<GraphFormat> export_formats{GraphFormat::Dot, GraphFormat::GraphMl};
    std::filesystem::path output_dir = "runs";
};

/// Parses JSON text; missing fields take defaults, unknown fields and
/// out-of-range values raise ValidationError("<field.path>: ...").
RunConfig parse_config(const std::string& json_text);
RunConfig load_config(const std::filesystem::path& path);

/// Range checks on an in-memory config.
void validate_config(const RunConfig& cfg);

/// Effective configuration with every field present.
std::string config_to_json(const RunConfig& cfg);

} // namespace ccgl

#endif // CCGL_CONFIG_HPP
