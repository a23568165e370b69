#include "ccgl/cgl_encoder.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace ccgl {

using namespace ccgl::ad;

// ---------------------------------------------------------------------------
// Laplacians

SparseMatrix adjacency_matrix(const ViewGraph& graph) {
    const int r = graph.roi_count;
    std::vector<Eigen::Triplet<double>> trips;
    trips.reserve(graph.edges.size() * 2);
    for (const auto& e : graph.edges) {
        if (e.i < 0 || e.j >= r || e.i >= e.j) {
            throw DataError("invalid edge (" + std::to_string(e.i) + ", " + std::to_string(e.j) + ")");
        }
        trips.emplace_back(e.i, e.j, std::abs(e.weight));
        trips.emplace_back(e.j, e.i, std::abs(e.weight));
    }
    SparseMatrix a(r, r);
    a.setFromTriplets(trips.begin(), trips.end());
    return a;
}

SparseMatrix normalized_laplacian(const SparseMatrix& adjacency) {
    const Eigen::Index r = adjacency.rows();
    Vector inv_sqrt_deg = Vector::Zero(r);
    for (Eigen::Index i = 0; i < r; ++i) {
        double deg = 0.0;
        for (SparseMatrix::InnerIterator it(adjacency, i); it; ++it) deg += it.value();
        if (deg > 0.0) inv_sqrt_deg(i) = 1.0 / std::sqrt(deg);
    }
    std::vector<Eigen::Triplet<double>> trips;
    for (Eigen::Index i = 0; i < r; ++i) {
        trips.emplace_back(static_cast<int>(i), static_cast<int>(i), 1.0);
        for (SparseMatrix::InnerIterator it(adjacency, i); it; ++it) {
            if (it.col() == i) continue;
            // Fixed operand order keeps L bit-for-bit symmetric.
            const Eigen::Index lo = std::min(i, it.col()), hi = std::max(i, it.col());
            const double v = -(inv_sqrt_deg(lo) * inv_sqrt_deg(hi)) * it.value();
            if (v != 0.0) trips.emplace_back(static_cast<int>(i), static_cast<int>(it.col()), v);
        }
    }
    SparseMatrix l(r, r);
    l.setFromTriplets(trips.begin(), trips.end());
    return l;
}

SparseMatrix normalized_laplacian(const ViewGraph& graph) {
    return normalized_laplacian(adjacency_matrix(graph));
}

double largest_eigenvalue(const SparseMatrix& L, double tol) {
    if (!(tol > 0.0)) throw NumericError("largest_eigenvalue: tol must be positive");
    const Eigen::Index n = L.rows();
    if (n == 0) throw NumericError("largest_eigenvalue: empty matrix");
    std::mt19937_64 rng(0x9e3779b97f4a7c15ULL);
    std::normal_distribution<double> normal(0.0, 1.0);
    Vector x(n);
    for (Eigen::Index i = 0; i < n; ++i) x(i) = normal(rng);
    x.normalize();
    constexpr int kMaxIterations = 10000;
    constexpr int kSettled = 3;
    double prev_lambda = 0.0;
    double prev_step = 0.0;
    int settled = 0;
    for (int it = 0; it < kMaxIterations; ++it) {
        const Vector y = L * x;
        const double lambda = x.dot(y);
        const double residual = (y - lambda * x).norm();
        const auto done = [&] { return std::clamp(lambda, std::numeric_limits<double>::min(), 2.0); };
        if (residual < tol) return done();
        // With a narrow spectral gap the residual decays slowly while the
        // Rayleigh quotient has already converged; estimate its remaining
        // change from the geometric rate of the last two steps.
        const double step = lambda - prev_lambda;
        if (it >= 2) {
            const double rate = prev_step != 0.0 ? step / prev_step : 0.0;
            const bool stalled = std::abs(step) <= 4.0 * std::numeric_limits<double>::epsilon() * std::abs(lambda);
            const bool geometric = rate > 0.0 && rate < 1.0 && std::abs(step) * rate / (1.0 - rate) < 0.1 * tol;
            settled = stalled || geometric ? settled + 1 : 0;
            if (settled >= kSettled) return done();
        }
        prev_step = step;
        prev_lambda = lambda;
        const double norm = y.norm();
        if (!(norm > 0.0)) throw NumericError("largest_eigenvalue: iterate collapsed to zero");
        x = y / norm;
    }
    throw NumericError("largest_eigenvalue: no convergence in 10000 iterations");
}

ScaledLaplacian scale_laplacian(SparseMatrix L, LambdaMode mode) {
    ScaledLaplacian s;
    // The Rayleigh quotient approaches lambda_max from below with error of
    // order residual^2 / gap, so a tight residual keeps the spectrum of
    // L_tilde inside [-1, 1] to within 1e-9.
    constexpr double kScalingTol = 1e-9;
    const double lambda = mode == LambdaMode::FixedTwo ? 2.0 : largest_eigenvalue(L, kScalingTol);
    s.lambda_max = std::max(1.0, lambda);
    SparseMatrix eye(L.rows(), L.cols());
    eye.setIdentity();
    s.L_tilde = (2.0 / s.lambda_max) * L - eye;
    s.L_tilde.prune(0.0);
    s.L = std::move(L);
    return s;
}

ScaledLaplacian scaled_laplacian(const SparseMatrix& adjacency, LambdaMode mode) {
    return scale_laplacian(normalized_laplacian(adjacency), mode);
}

// ---------------------------------------------------------------------------
// Chebyshev convolution

Var chebyshev_conv(const Var& v, const ScaledLaplacian& lap, std::span<const Var> theta) {
    if (theta.empty()) throw ShapeError("chebyshev_conv: need at least one filter");
    if (lap.L_tilde.rows() != v.rows()) {
        throw ShapeError("chebyshev_conv: Laplacian is " + shape_str(lap.L_tilde.rows(), lap.L_tilde.cols()) +
                         ", features have " + std::to_string(v.rows()) + " rows");
    }
    for (const auto& t : theta) {
        if (t.rows() != v.cols() || t.cols() != theta.front().cols()) {
            throw ShapeError("chebyshev_conv: filter shape " + shape_str(t.rows(), t.cols()) +
                             " incompatible with " + std::to_string(v.cols()) + " input features");
        }
    }
    Var z_prev2 = v;
    Var out = matmul(v, theta[0]);
    if (theta.size() == 1) return out;
    Var z_prev = spmm(lap.L_tilde, v);
    out = add(out, matmul(z_prev, theta[1]));
    for (std::size_t k = 2; k < theta.size(); ++k) {
        Var z = sub(scale(spmm(lap.L_tilde, z_prev), 2.0), z_prev2);
        out = add(out, matmul(z, theta[k]));
        z_prev2 = z_prev;
        z_prev = z;
    }
    return out;
}

Matrix chebyshev_conv(const Matrix& v, const ScaledLaplacian& lap, std::span<const Matrix> theta) {
    ParamStore none;
    Tape tape(none);
    std::vector<Var> filters;
    for (const auto& t : theta) filters.push_back(tape.constant(t));
    return chebyshev_conv(tape.constant(v), lap, filters).value();
}

// ---------------------------------------------------------------------------
// Pooling

std::vector<int> topk_select(const Vector& scores, int keep) {
    std::vector<int> order(static_cast<std::size_t>(scores.size()));
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return scores(a) > scores(b); });
    order.resize(static_cast<std::size_t>(std::clamp<Eigen::Index>(keep, 0, scores.size())));
    return order;
}

PoolResult topk_pool(const Var& v, const SparseMatrix& adjacency, const Var& score, double ratio,
                     LambdaMode mode) {
    if (!(ratio > 0.0 && ratio <= 1.0)) throw ShapeError("topk_pool: ratio must lie in (0, 1]");
    if (v.rows() < 1) throw ShapeError("topk_pool: empty graph");
    if (score.rows() != v.cols() || score.cols() != 1) {
        throw ShapeError("topk_pool: score vector must be " + std::to_string(v.cols()) + "x1");
    }
    Var p_norm = sqrt(sum(mul(score, score)));
    Var s = div(matmul(v, score), p_norm); // R x 1

    const int r = static_cast<int>(v.rows());
    const int keep = std::max(1, static_cast<int>(std::ceil(ratio * r - 1e-12)));
    PoolResult out;
    out.kept = topk_select(s.value().col(0), keep);

    const SparseMatrix gather = gather_matrix(out.kept, r);
    Var gate = tanh(spmm(gather, s));
    out.features = mul(spmm(gather, v), gate);
    out.adjacency = SparseMatrix(gather * adjacency * SparseMatrix(gather.transpose()));
    out.laplacian = scaled_laplacian(out.adjacency, mode);
    return out;
}

// ---------------------------------------------------------------------------
// Encoder

PreparedGraph prepare_graph(const ViewGraph& graph, LambdaMode mode) {
    PreparedGraph p;
    p.node_features = graph.node_features;
    p.adjacency = adjacency_matrix(graph);
    p.laplacian = scaled_laplacian(p.adjacency, mode);
    return p;
}

namespace {

std::string block_name(int block, const std::string& what) {
    return "enc.b" + std::to_string(block + 1) + "." + what;
}

void check_encoder_config(const EncoderConfig& cfg) {
    if (cfg.hidden.empty()) throw Error("encoder: need at least one block");
    if (cfg.cheb_order < 1) throw Error("encoder: cheb_order must be positive");
    if (cfg.embedding_dim < 1) throw Error("encoder: embedding_dim must be positive");
}

} // namespace

ParamStore make_encoder(int in_features, const EncoderConfig& cfg, std::uint64_t seed) {
    check_encoder_config(cfg);
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    ParamStore store;
    int width = in_features;
    for (std::size_t b = 0; b < cfg.hidden.size(); ++b) {
        const int out = cfg.hidden[b];
        for (int k = 0; k < cfg.cheb_order; ++k) {
            store.add(block_name(static_cast<int>(b), "theta" + std::to_string(k + 1)), glorot(width, out, rng));
        }
        Matrix p(out, 1);
        for (Eigen::Index i = 0; i < out; ++i) p(i, 0) = normal(rng);
        store.add(block_name(static_cast<int>(b), "pool"), std::move(p));
        width = out;
    }
    store.add("enc.readout", glorot(2 * width, cfg.embedding_dim, rng));
    return store;
}

Var encode_unnormalized(Tape& tape, const PreparedGraph& graph, const EncoderConfig& cfg) {
    check_encoder_config(cfg);
    Var x = tape.constant(graph.node_features);
    const ScaledLaplacian* lap = &graph.laplacian;
    SparseMatrix adjacency = graph.adjacency;
    ScaledLaplacian pooled_lap;
    for (std::size_t b = 0; b < cfg.hidden.size(); ++b) {
        std::vector<Var> theta;
        for (int k = 0; k < cfg.cheb_order; ++k) {
            theta.push_back(tape.param(block_name(static_cast<int>(b), "theta" + std::to_string(k + 1))));
        }
        Var h = relu(chebyshev_conv(x, *lap, theta));
        PoolResult pooled =
            topk_pool(h, adjacency, tape.param(block_name(static_cast<int>(b), "pool")), cfg.pool_ratio,
                      cfg.lambda_mode);
        x = pooled.features;
        adjacency = std::move(pooled.adjacency);
        pooled_lap = std::move(pooled.laplacian);
        lap = &pooled_lap;
    }
    const std::array<Var, 2> readout{mean_rows(x), max_rows(x)};
    return matmul(concat_cols(readout), tape.param("enc.readout"));
}

Var normalize_rows(const Var& e) {
    return div(e, sqrt(sum_cols(mul(e, e))));
}

Var encode(Tape& tape, const PreparedGraph& graph, const EncoderConfig& cfg) {
    return normalize_rows(encode_unnormalized(tape, graph, cfg));
}

Vector encode(const PreparedGraph& graph, const ParamStore& params, const EncoderConfig& cfg) {
    Tape tape(params);
    return encode(tape, graph, cfg).value().row(0).transpose();
}

Vector encode(const ViewGraph& graph, const ParamStore& params, const EncoderConfig& cfg) {
    return encode(prepare_graph(graph, cfg.lambda_mode), params, cfg);
}

// ---------------------------------------------------------------------------
// Attraction and contrastive loss

Var similarity_matrix(const Var& embeddings) {
    Var unit = normalize_rows(embeddings);
    return matmul(unit, transpose(unit));
}

AttractionMatrix similarity_matrix(const Matrix& embeddings, std::vector<std::pair<int, int>> pairing) {
    const Eigen::Index n = embeddings.rows();
    if (static_cast<Eigen::Index>(pairing.size()) != n) {
        throw ShapeError("similarity_matrix: pairing has " + std::to_string(pairing.size()) + " entries for " +
                         std::to_string(n) + " rows");
    }
    Vector norms = embeddings.rowwise().norm();
    for (Eigen::Index i = 0; i < n; ++i) {
        if (!(norms(i) > 0.0)) {
            throw NumericError("similarity_matrix: embedding " + std::to_string(i) + " has zero norm");
        }
    }
    const Matrix unit = norms.cwiseInverse().asDiagonal() * embeddings;
    AttractionMatrix m;
    m.values = unit * unit.transpose();
    for (Eigen::Index a = 0; a < n; ++a) {
        m.values(a, a) = 1.0;
        for (Eigen::Index b = a + 1; b < n; ++b) {
            const double v = std::clamp(m.values(a, b), -1.0, 1.0);
            m.values(a, b) = v;
            m.values(b, a) = v;
        }
    }
    m.pairing = std::move(pairing);
    return m;
}

AttractionMatrix similarity_matrix(const Matrix& embeddings) {
    std::vector<std::pair<int, int>> pairing;
    for (Eigen::Index i = 0; i < embeddings.rows(); ++i) {
        pairing.emplace_back(static_cast<int>(i / 2), static_cast<int>(i % 2));
    }
    return similarity_matrix(embeddings, std::move(pairing));
}

double pair_loss(const Matrix& m, int row, int col, double tau) {
    if (!(tau > 0.0)) throw Error("contrastive loss: tau must be positive");
    if (row == col) throw Error("pair_loss: self pair");
    double peak = -std::numeric_limits<double>::infinity();
    for (Eigen::Index i = 0; i < m.cols(); ++i) {
        if (i != row) peak = std::max(peak, m(row, i) / tau);
    }
    double denom = 0.0;
    for (Eigen::Index i = 0; i < m.cols(); ++i) {
        if (i != row) denom += std::exp(m(row, i) / tau - peak);
    }
    return peak + std::log(denom) - m(row, col) / tau;
}

Var contrastive_loss(const Var& m, double tau) {
    if (!(tau > 0.0)) throw Error("contrastive loss: tau must be positive");
    const Eigen::Index n = m.rows();
    if (n != m.cols() || n < 2 || n % 2 != 0) {
        throw ShapeError("contrastive_loss: need a square attraction matrix with an even size, got " +
                         shape_str(m.rows(), m.cols()));
    }
    Tape& tape = m.tape();
    Matrix off_diag = Matrix::Ones(n, n);
    off_diag.diagonal().setZero();
    Matrix partner = Matrix::Zero(n, n);
    for (Eigen::Index i = 0; i < n; i += 2) {
        partner(i, i + 1) = 1.0;
        partner(i + 1, i) = 1.0;
    }
    Var logits = scale(m, 1.0 / tau);
    // Row maxima over i != m, held constant: shifting a log-sum-exp does not
    // change its value or gradient.
    Matrix peak(n, 1);
    for (Eigen::Index r = 0; r < n; ++r) {
        double best = -std::numeric_limits<double>::infinity();
        for (Eigen::Index c = 0; c < n; ++c)
            if (c != r) best = std::max(best, logits.value()(r, c));
        peak(r, 0) = best;
    }
    Var shift = tape.constant(peak);
    Var masked = mul(exp(sub(logits, shift)), tape.constant(off_diag));
    Var lse = add(log(sum_cols(masked)), shift);                   // n x 1
    Var positive = sum_cols(mul(logits, tape.constant(partner))); // n x 1
    return mean(sub(lse, positive));
}

double contrastive_loss(const Matrix& m, double tau) {
    ParamStore none;
    Tape tape(none);
    return contrastive_loss(tape.constant(m), tau).scalar();
}

// ---------------------------------------------------------------------------
// Training

CglResult train_cgl(std::span<const PatientViews> patients, std::span<const int> train_rows,
                    const CglConfig& cfg, std::uint64_t seed) {
    if (train_rows.size() < 2) throw Error("train_cgl: need at least 2 training patients");
    if (cfg.batch_size < 1) throw Error("train_cgl: batch_size must be positive");
    if (!(cfg.lr >= 0.0)) throw Error("train_cgl: lr must be non-negative");
    int in_features = -1;
    for (int row : train_rows) {
        const auto& views = patients[static_cast<std::size_t>(row)];
        if (views.size() < 2) throw Error("train_cgl: every patient needs at least 2 views");
        for (const auto& g : views) {
            const int f = static_cast<int>(g.node_features.cols());
            if (in_features >= 0 && f != in_features) throw ShapeError("train_cgl: inconsistent feature widths");
            in_features = f;
        }
    }

    CglResult result;
    result.params = make_encoder(in_features, cfg.encoder, seed);
    std::mt19937_64 rng(seed ^ 0xc6a4a7935bd1e995ULL);
    std::vector<int> order(train_rows.begin(), train_rows.end());

    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        double loss_sum = 0.0;
        int batches = 0;
        double homo_sum = 0.0, heter_sum = 0.0;
        long homo_n = 0, heter_n = 0;
        for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
            const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
            Tape tape(result.params);
            std::vector<Var> rows;
            for (std::size_t b = start; b < end; ++b) {
                const auto& views = patients[static_cast<std::size_t>(order[b])];
                int first = 0, second = 1;
                if (views.size() > 2) {
                    std::uniform_int_distribution<int> pick(0, static_cast<int>(views.size()) - 1);
                    first = pick(rng);
                    do {
                        second = pick(rng);
                    } while (second == first);
                }
                rows.push_back(encode(tape, views[static_cast<std::size_t>(first)], cfg.encoder));
                rows.push_back(encode(tape, views[static_cast<std::size_t>(second)], cfg.encoder));
            }
            Var m = similarity_matrix(concat_rows(rows));
            Var loss = contrastive_loss(m, cfg.tau);
            const double value = loss.scalar();
            if (!std::isfinite(value)) {
                throw NumericError("train_cgl: non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                                   std::to_string(batches + 1));
            }
            GradMap grads = tape.backward(loss);
            adam_step(result.params, grads, cfg.lr);

            const Matrix& mv = m.value();
            for (Eigen::Index a = 0; a < mv.rows(); ++a) {
                for (Eigen::Index c = 0; c < mv.cols(); ++c) {
                    if (a == c) continue;
                    if (a / 2 == c / 2) {
                        homo_sum += mv(a, c);
                        ++homo_n;
                    } else {
                        heter_sum += mv(a, c);
                        ++heter_n;
                    }
                }
            }
            loss_sum += value;
            ++batches;
        }
        CglEpoch e;
        e.epoch = epoch;
        e.loss = loss_sum / batches;
        e.mean_homo = homo_n ? homo_sum / static_cast<double>(homo_n) : 0.0;
        e.mean_heter = heter_n ? heter_sum / static_cast<double>(heter_n) : 0.0;
        result.history.push_back(e);
    }
    return result;
}

std::vector<Matrix> embed_views(std::span<const PatientViews> patients, const ParamStore& params,
                                const EncoderConfig& cfg) {
    std::vector<Matrix> out;
    out.reserve(patients.size());
    for (const auto& views : patients) {
        Matrix e(static_cast<Eigen::Index>(views.size()), cfg.embedding_dim);
        for (std::size_t v = 0; v < views.size(); ++v) {
            e.row(static_cast<Eigen::Index>(v)) = encode(views[v], params, cfg).transpose();
        }
        out.push_back(std::move(e));
    }
    return out;
}

} // namespace ccgl
