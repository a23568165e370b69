#ifndef CCGL_CGL_ENCODER_HPP
#define CCGL_CGL_ENCODER_HPP

#include "ccgl/fc_graph.hpp"
#include "ccgl/tensor.hpp"

#include <cstdint>
#include <span>
#include <utility>
#include <vector>

namespace ccgl {

enum class LambdaMode {
    PowerIteration, ///< Estimate the largest eigenvalue of every Laplacian.
    FixedTwo,       ///< Use the spectral upper bound 2.
};

struct ScaledLaplacian {
    SparseMatrix L;
    double lambda_max = 2.0;
    SparseMatrix L_tilde; ///< 2 L / lambda_max - I
};

/// Symmetric adjacency with a(i, j) = |weight|.
SparseMatrix adjacency_matrix(const ViewGraph& graph);

/// I - D^{-1/2} A D^{-1/2}; isolated nodes get an identity row.
SparseMatrix normalized_laplacian(const SparseMatrix& adjacency);
SparseMatrix normalized_laplacian(const ViewGraph& graph);

/// Power iteration from a fixed-seed start vector. Stops once the residual
/// ||L x - lambda x|| drops below `tol`, or once the Rayleigh quotient has
/// settled to within `tol` (narrow spectral gaps); throws NumericError after
/// 10000 iterations. The estimate is clamped to (0, 2].
double largest_eigenvalue(const SparseMatrix& L, double tol = 1e-6);

/// lambda_max is floored at 1 so edgeless graphs map to L_tilde = I.
ScaledLaplacian scale_laplacian(SparseMatrix L, LambdaMode mode);
ScaledLaplacian scaled_laplacian(const SparseMatrix& adjacency, LambdaMode mode);

/// sum_k Z_k(V) theta_k with Z_1 = V, Z_2 = L~ V, Z_k = 2 L~ Z_{k-1} - Z_{k-2}.
Var chebyshev_conv(const Var& v, const ScaledLaplacian& lap, std::span<const Var> theta);
Matrix chebyshev_conv(const Matrix& v, const ScaledLaplacian& lap, std::span<const Matrix> theta);

/// Indices of the `keep` highest scores, in descending score order; equal
/// scores resolve toward the lower index.
std::vector<int> topk_select(const Vector& scores, int keep);

struct PoolResult {
    Var features;
    SparseMatrix adjacency;
    ScaledLaplacian laplacian;
    std::vector<int> kept;
};

/// Top-K pooling: s = V p / ||p||, keep ceil(ratio * R) nodes and gate the
/// survivors by tanh(s). The Laplacian of the induced subgraph is rebuilt.
PoolResult topk_pool(const Var& v, const SparseMatrix& adjacency, const Var& score, double ratio,
                     LambdaMode mode);

struct EncoderConfig {
    std::vector<int> hidden{64, 64};
    int embedding_dim = 64;
    int cheb_order = 3;
    double pool_ratio = 0.5;
    LambdaMode lambda_mode = LambdaMode::PowerIteration;
};

/// A ViewGraph with its adjacency and scaled Laplacian precomputed.
struct PreparedGraph {
    Matrix node_features;
    SparseMatrix adjacency;
    ScaledLaplacian laplacian;
};

PreparedGraph prepare_graph(const ViewGraph& graph, LambdaMode mode);

/// Parameter layout: enc.b{1,2}.theta{1..K}, enc.b{1,2}.pool, enc.readout.
ParamStore make_encoder(int in_features, const EncoderConfig& cfg, std::uint64_t seed);

/// 1 x d embedding before L2 normalisation.
Var encode_unnormalized(Tape& tape, const PreparedGraph& graph, const EncoderConfig& cfg);
/// 1 x d unit-length embedding.
Var encode(Tape& tape, const PreparedGraph& graph, const EncoderConfig& cfg);
Vector encode(const ViewGraph& graph, const ParamStore& params, const EncoderConfig& cfg);
Vector encode(const PreparedGraph& graph, const ParamStore& params, const EncoderConfig& cfg);

/// Row L2 normalisation on the tape.
Var normalize_rows(const Var& e);

/// Pairwise cosine similarities of all rows.
struct AttractionMatrix {
    Matrix values;
    /// Row index -> (patient index, view index).
    std::vector<std::pair<int, int>> pairing;
};

Var similarity_matrix(const Var& embeddings);
/// Rows 2i and 2i + 1 are the two views of patient i.
AttractionMatrix similarity_matrix(const Matrix& embeddings);
AttractionMatrix similarity_matrix(const Matrix& embeddings, std::vector<std::pair<int, int>> pairing);

/// -log( exp(M(m,n)/tau) / sum_{i != m} exp(M(m,i)/tau) ).
double pair_loss(const Matrix& m, int row, int col, double tau);

/// Batch contrastive loss over the 2N homo pairs, rows paired as (2i, 2i+1).
Var contrastive_loss(const Var& m, double tau);
double contrastive_loss(const Matrix& m, double tau);

struct CglConfig {
    EncoderConfig encoder;
    double tau = 0.1;
    int batch_size = 100;
    int epochs = 150;
    double lr = 1e-3;
};

struct CglEpoch {
    int epoch = 0;
    double loss = 0.0;
    double mean_homo = 0.0;
    double mean_heter = 0.0;
};

struct CglResult {
    ParamStore params;
    std::vector<CglEpoch> history;
};

using PatientViews = std::vector<PreparedGraph>;

/// Contrastive training over the patients in `train_rows`. Every batch
/// occurrence draws two distinct views per patient.
CglResult train_cgl(std::span<const PatientViews> patients, std::span<const int> train_rows,
                    const CglConfig& cfg, std::uint64_t seed);

/// Embeds every view of every patient; result[i] is n_views x d.
std::vector<Matrix> embed_views(std::span<const PatientViews> patients, const ParamStore& params,
                                const EncoderConfig& cfg);

} // namespace ccgl

#endif // CCGL_CGL_ENCODER_HPP
