#include "stuttergate/transducer.h"

#include "stuttergate/detail/binary_io.h"
#include "stuttergate/parallel.h"
#include "stuttergate/random.h"

#include <Eigen/Dense>
#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>
#include <numeric>

namespace stuttergate {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowVec = Eigen::Matrix<double, 1, Eigen::Dynamic>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

ConstMap mat(const Tensor& t) {
    return ConstMap(t.data.data(), static_cast<Eigen::Index>(t.shape[0]),
                    static_cast<Eigen::Index>(t.shape.size() > 1 ? t.shape[1] : 1));
}

MutMap mat(Tensor& t) {
    return MutMap(t.data.data(), static_cast<Eigen::Index>(t.shape[0]),
                  static_cast<Eigen::Index>(t.shape.size() > 1 ? t.shape[1] : 1));
}

Eigen::Map<const RowVec> vec(const Tensor& t) {
    return Eigen::Map<const RowVec>(t.data.data(), static_cast<Eigen::Index>(t.data.size()));
}

Eigen::Map<RowVec> vec(Tensor& t) { return Eigen::Map<RowVec>(t.data.data(), static_cast<Eigen::Index>(t.data.size())); }

double log_add(double a, double b) {
    if (a == kNegInf) return b;
    if (b == kNegInf) return a;
    const double m = std::max(a, b);
    return m + std::log1p(std::exp(-std::abs(a - b)));
}

/// Row-wise log-softmax in place.
void log_softmax_rows(RowMat& m) {
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
        auto row = m.row(r);
        const double mx = row.maxCoeff();
        const double lse = mx + std::log((row.array() - mx).exp().sum());
        row.array() -= lse;
    }
}

RowMat normalized_input(const TransducerNets& nets, const FeatureMatrix& f) {
    if (f.cols != nets.arch.input_dim) {
        throw Error(ErrorKind::Shape, "transducer input has " + std::to_string(f.cols) + " columns, expected " +
                                          std::to_string(nets.arch.input_dim));
    }
    RowMat x = ConstMap(f.data.data(), static_cast<Eigen::Index>(f.rows), static_cast<Eigen::Index>(f.cols));
    x.rowwise() -= vec(nets.buffers.get("norm.mean"));
    x.array().rowwise() /= vec(nets.buffers.get("norm.std")).array();
    return x;
}

RowMat run_encoder(const TransducerNets& nets, const RowMat& x) {
    const auto wx = mat(nets.params.get("enc.w_x"));
    const auto wh = mat(nets.params.get("enc.w_h"));
    const auto b = vec(nets.params.get("enc.b"));
    RowMat pre = x * wx.transpose();
    pre.rowwise() += b;
    RowMat h(x.rows(), wh.rows());
    for (Eigen::Index t = 0; t < x.rows(); ++t) {
        if (t == 0) {
            h.row(t) = pre.row(t).array().tanh();
        } else {
            h.row(t) = (pre.row(t) + h.row(t - 1) * wh.transpose()).array().tanh();
        }
    }
    return h;
}

RowVec predictor_step(const TransducerNets& nets, std::size_t label, const RowVec* prev) {
    const auto embed = mat(nets.params.get("pred.embed"));
    RowVec pre = embed.col(static_cast<Eigen::Index>(label)).transpose() + vec(nets.params.get("pred.b"));
    if (prev) pre.noalias() += *prev * mat(nets.params.get("pred.w_h")).transpose();
    return pre.array().tanh();
}

RowMat run_predictor(const TransducerNets& nets, std::span<const std::size_t> target) {
    RowMat g(static_cast<Eigen::Index>(target.size() + 1), static_cast<Eigen::Index>(nets.arch.predictor_hidden));
    RowVec state = predictor_step(nets, kBlank, nullptr);
    g.row(0) = state;
    for (std::size_t u = 0; u < target.size(); ++u) {
        state = predictor_step(nets, target[u], &state);
        g.row(static_cast<Eigen::Index>(u + 1)) = state;
    }
    return g;
}

void check_target(const TransducerArch& arch, std::span<const std::size_t> target) {
    for (const std::size_t y : target) {
        if (y == kBlank || y >= arch.n_outputs()) {
            throw Error(ErrorKind::OutOfRange, "target token id " + std::to_string(y) + " outside 1.." +
                                                   std::to_string(arch.vocabulary.size()));
        }
    }
}

} // namespace

void TransducerArch::validate() const {
    if (input_dim == 0 || (flag_input && input_dim < 2)) throw Error(ErrorKind::Config, "transducer input_dim too small");
    if (encoder_hidden == 0 || predictor_hidden == 0 || joint_hidden == 0) {
        throw Error(ErrorKind::Config, "transducer layer widths must be positive");
    }
    if (vocabulary.empty()) throw Error(ErrorKind::Config, "transducer vocabulary is empty");
    if (emission_cap == 0) throw Error(ErrorKind::Config, "emission_cap must be positive");
    for (std::size_t i = 0; i < vocabulary.size(); ++i) {
        for (std::size_t j = i + 1; j < vocabulary.size(); ++j) {
            if (vocabulary[i] == vocabulary[j]) throw Error(ErrorKind::Config, "duplicate token '" + vocabulary[i] + "'");
        }
    }
}

std::string TransducerArch::to_json() const {
    nlohmann::ordered_json j = {
        {"input_dim", input_dim},
        {"flag_input", flag_input},
        {"encoder_hidden", encoder_hidden},
        {"predictor_hidden", predictor_hidden},
        {"joint_hidden", joint_hidden},
        {"emission_cap", emission_cap},
        {"vocabulary", vocabulary},
    };
    return j.dump();
}

TransducerArch TransducerArch::from_json(const std::string& text) {
    try {
        const auto j = nlohmann::json::parse(text);
        TransducerArch a;
        a.input_dim = j.at("input_dim");
        a.flag_input = j.at("flag_input");
        a.encoder_hidden = j.at("encoder_hidden");
        a.predictor_hidden = j.at("predictor_hidden");
        a.joint_hidden = j.at("joint_hidden");
        a.emission_cap = j.at("emission_cap");
        a.vocabulary = j.at("vocabulary").get<std::vector<std::string>>();
        a.validate();
        return a;
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorKind::Parse, std::string("transducer arch: ") + e.what());
    }
}

TransducerNets init_transducer(const TransducerArch& arch, std::uint64_t seed) {
    arch.validate();
    TransducerNets n;
    n.arch = arch;
    Rng rng(seed, 0x726e74);
    auto normal = [&](Tensor& t, double scale) {
        for (double& v : t.data) v = scale * rng.normal();
    };
    const std::size_t D = arch.input_dim, H = arch.encoder_hidden, P = arch.predictor_hidden, J = arch.joint_hidden,
                      K1 = arch.n_outputs();
    auto inv_sqrt = [](std::size_t n) { return 1.0 / std::sqrt(static_cast<double>(n)); };
    normal(n.params.add("enc.w_x", {H, D}), inv_sqrt(D));
    normal(n.params.add("enc.w_h", {H, H}), 0.5 * inv_sqrt(H));
    n.params.add("enc.b", {H});
    normal(n.params.add("pred.embed", {P, K1}), 1.0);
    normal(n.params.add("pred.w_h", {P, P}), 0.5 * inv_sqrt(P));
    n.params.add("pred.b", {P});
    normal(n.params.add("joint.w_zt", {J, H}), inv_sqrt(H));
    normal(n.params.add("joint.w_zu", {J, P}), inv_sqrt(P));
    n.params.add("joint.b_z", {J});
    normal(n.params.add("joint.w_h", {K1, J}), inv_sqrt(J));
    n.params.add("joint.b_h", {K1});
    n.buffers.add("norm.mean", {D}, 0.0);
    n.buffers.add("norm.std", {D}, 1.0);
    if (arch.flag_input) n.buffers.get("norm.mean").data[D - 1] = 0.5;
    return n;
}

void zero_transducer_weights(TransducerNets& nets) { nets.params.fill(0.0); }

void fit_input_normalization(TransducerNets& nets, std::span<const FeatureMatrix> features) {
    const std::size_t D = nets.arch.input_dim;
    std::vector<double> sum(D, 0.0), sq(D, 0.0);
    std::size_t n = 0;
    for (const auto& f : features) {
        if (f.cols != D) throw Error(ErrorKind::Shape, "normalization input has the wrong width");
        for (std::size_t r = 0; r < f.rows; ++r) {
            for (std::size_t c = 0; c < D; ++c) {
                sum[c] += f.at(r, c);
                sq[c] += f.at(r, c) * f.at(r, c);
            }
        }
        n += f.rows;
    }
    if (n == 0) throw Error(ErrorKind::EmptyInput, "no frames to fit input normalization");
    auto& mean = nets.buffers.get("norm.mean").data;
    auto& sd = nets.buffers.get("norm.std").data;
    for (std::size_t c = 0; c < D; ++c) {
        mean[c] = sum[c] / static_cast<double>(n);
        sd[c] = std::max(std::sqrt(std::max(sq[c] / static_cast<double>(n) - mean[c] * mean[c], 0.0)), 1e-3);
    }
    if (nets.arch.flag_input) {
        mean[D - 1] = 0.5;
        sd[D - 1] = 1.0;
    }
}

std::size_t token_id(const TransducerArch& arch, const std::string& word) {
    const auto it = std::find(arch.vocabulary.begin(), arch.vocabulary.end(), word);
    if (it == arch.vocabulary.end()) throw Error(ErrorKind::OutOfRange, "token '" + word + "' not in vocabulary");
    return static_cast<std::size_t>(it - arch.vocabulary.begin()) + 1;
}

std::vector<std::size_t> encode_tokens(const TransducerArch& arch, const std::vector<std::string>& words) {
    std::vector<std::size_t> out;
    out.reserve(words.size());
    for (const auto& w : words) out.push_back(token_id(arch, w));
    return out;
}

std::vector<std::string> decode_tokens(const TransducerArch& arch, const std::vector<std::size_t>& ids) {
    std::vector<std::string> out;
    out.reserve(ids.size());
    for (const std::size_t id : ids) {
        if (id == kBlank || id >= arch.n_outputs()) throw Error(ErrorKind::OutOfRange, "bad token id " + std::to_string(id));
        out.push_back(arch.vocabulary[id - 1]);
    }
    return out;
}

std::vector<double> joint(const TransducerNets& nets, std::span<const double> h_enc, std::span<const double> h_pred) {
    if (h_enc.size() != nets.arch.encoder_hidden || h_pred.size() != nets.arch.predictor_hidden) {
        throw Error(ErrorKind::Shape, "joint input dims " + std::to_string(h_enc.size()) + "/" +
                                          std::to_string(h_pred.size()) + " do not match " +
                                          std::to_string(nets.arch.encoder_hidden) + "/" +
                                          std::to_string(nets.arch.predictor_hidden));
    }
    const Eigen::Map<const RowVec> he(h_enc.data(), static_cast<Eigen::Index>(h_enc.size()));
    const Eigen::Map<const RowVec> hp(h_pred.data(), static_cast<Eigen::Index>(h_pred.size()));
    const RowVec z = (he * mat(nets.params.get("joint.w_zt")).transpose() +
                      hp * mat(nets.params.get("joint.w_zu")).transpose() + vec(nets.params.get("joint.b_z")))
                         .array()
                         .tanh();
    RowMat logits = z * mat(nets.params.get("joint.w_h")).transpose() + vec(nets.params.get("joint.b_h"));
    log_softmax_rows(logits);
    std::vector<double> p(static_cast<std::size_t>(logits.cols()));
    for (Eigen::Index k = 0; k < logits.cols(); ++k) p[static_cast<std::size_t>(k)] = std::exp(logits(0, k));
    return p;
}

FeatureMatrix encode(const TransducerNets& nets, const FeatureMatrix& features) {
    const RowMat h = run_encoder(nets, normalized_input(nets, features));
    FeatureMatrix out(static_cast<std::size_t>(h.rows()), static_cast<std::size_t>(h.cols()));
    std::copy(h.data(), h.data() + h.size(), out.data.begin());
    out.utterance_id = features.utterance_id;
    return out;
}

LossResult transducer_loss(const TransducerNets& nets, const FeatureMatrix& features, std::span<const std::size_t> target,
                           TensorSet* grads) {
    if (features.rows == 0) throw Error(ErrorKind::EmptyInput, "transducer loss needs at least one frame");
    check_target(nets.arch, target);
    const std::size_t T = features.rows, U = target.size(), W = U + 1;
    const auto Ti = static_cast<Eigen::Index>(T), Wi = static_cast<Eigen::Index>(W);
    const auto J = static_cast<Eigen::Index>(nets.arch.joint_hidden);

    const RowMat x = normalized_input(nets, features);
    const RowMat henc = run_encoder(nets, x);
    const RowMat gpred = run_predictor(nets, target);
    const auto w_zt = mat(nets.params.get("joint.w_zt"));
    const auto w_zu = mat(nets.params.get("joint.w_zu"));
    const auto w_h = mat(nets.params.get("joint.w_h"));
    const RowMat A = henc * w_zt.transpose();
    RowMat B = gpred * w_zu.transpose();
    B.rowwise() += vec(nets.params.get("joint.b_z"));

    RowMat Z(Ti * Wi, J);
    for (Eigen::Index t = 0; t < Ti; ++t) {
        for (Eigen::Index u = 0; u < Wi; ++u) Z.row(t * Wi + u) = (A.row(t) + B.row(u)).array().tanh();
    }
    RowMat logp = Z * w_h.transpose();
    logp.rowwise() += vec(nets.params.get("joint.b_h"));
    log_softmax_rows(logp);

    LossResult res;
    Lattice& L = res.lattice;
    L.T = T;
    L.U = U;
    L.log_blank.resize(T * W);
    L.log_emit.assign(T * W, kNegInf);
    for (std::size_t t = 0; t < T; ++t) {
        for (std::size_t u = 0; u < W; ++u) {
            const auto row = static_cast<Eigen::Index>(t * W + u);
            L.log_blank[t * W + u] = logp(row, kBlank);
            if (u < U) L.log_emit[t * W + u] = logp(row, static_cast<Eigen::Index>(target[u]));
        }
    }
    auto idx = [W](std::size_t t, std::size_t u) { return t * W + u; };

    L.log_alpha.assign(T * W, kNegInf);
    L.log_alpha[0] = 0.0;
    for (std::size_t t = 0; t < T; ++t) {
        for (std::size_t u = 0; u < W; ++u) {
            if (t == 0 && u == 0) continue;
            double a = kNegInf;
            if (t > 0) a = L.log_alpha[idx(t - 1, u)] + L.log_blank[idx(t - 1, u)];
            if (u > 0) a = log_add(a, L.log_alpha[idx(t, u - 1)] + L.log_emit[idx(t, u - 1)]);
            L.log_alpha[idx(t, u)] = a;
        }
    }
    L.log_beta.assign(T * W, kNegInf);
    for (std::size_t t = T; t-- > 0;) {
        for (std::size_t u = W; u-- > 0;) {
            double b = kNegInf;
            if (t == T - 1 && u == U) {
                b = L.log_blank[idx(t, u)];
            } else {
                if (t + 1 < T) b = L.log_beta[idx(t + 1, u)] + L.log_blank[idx(t, u)];
                if (u < U) b = log_add(b, L.log_beta[idx(t, u + 1)] + L.log_emit[idx(t, u)]);
            }
            L.log_beta[idx(t, u)] = b;
        }
    }
    const double log_likelihood = L.log_alpha[idx(T - 1, U)] + L.log_blank[idx(T - 1, U)];
    if (!std::isfinite(log_likelihood)) {
        for (std::size_t t = 0; t < T; ++t) {
            for (std::size_t u = 0; u < W; ++u) {
                if (!std::isfinite(L.log_alpha[idx(t, u)]) || !std::isfinite(L.log_blank[idx(t, u)])) {
                    throw Error(ErrorKind::NumericFailure, "non-finite transducer lattice at cell (t=" +
                                                               std::to_string(t) + ", u=" + std::to_string(u) + ")");
                }
            }
        }
        throw Error(ErrorKind::NumericFailure, "non-finite transducer loss");
    }
    res.nll = -log_likelihood;
    if (!grads) return res;

    // d nll / d logits for every lattice node.
    RowMat dlogits = RowMat::Zero(Ti * Wi, logp.cols());
    for (std::size_t t = 0; t < T; ++t) {
        for (std::size_t u = 0; u < W; ++u) {
            const auto row = static_cast<Eigen::Index>(idx(t, u));
            const double a = L.log_alpha[idx(t, u)];
            double g_blank = 0.0;
            if (t + 1 < T) {
                g_blank = -std::exp(a + L.log_blank[idx(t, u)] + L.log_beta[idx(t + 1, u)] - log_likelihood);
            } else if (u == U) {
                g_blank = -std::exp(a + L.log_blank[idx(t, u)] - log_likelihood);
            }
            double g_emit = 0.0;
            if (u < U) g_emit = -std::exp(a + L.log_emit[idx(t, u)] + L.log_beta[idx(t, u + 1)] - log_likelihood);
            const double g_sum = g_blank + g_emit;
            dlogits.row(row) = -g_sum * logp.row(row).array().exp();
            dlogits(row, kBlank) += g_blank;
            if (u < U) dlogits(row, static_cast<Eigen::Index>(target[u])) += g_emit;
        }
    }

    mat(grads->get("joint.w_h")).noalias() += dlogits.transpose() * Z;
    vec(grads->get("joint.b_h")) += dlogits.colwise().sum();
    const RowMat dpre = (dlogits * w_h).array() * (1.0 - Z.array().square());
    vec(grads->get("joint.b_z")) += dpre.colwise().sum();
    RowMat dA = RowMat::Zero(Ti, J), dB = RowMat::Zero(Wi, J);
    for (Eigen::Index t = 0; t < Ti; ++t) {
        for (Eigen::Index u = 0; u < Wi; ++u) {
            dA.row(t) += dpre.row(t * Wi + u);
            dB.row(u) += dpre.row(t * Wi + u);
        }
    }
    mat(grads->get("joint.w_zt")).noalias() += dA.transpose() * henc;
    mat(grads->get("joint.w_zu")).noalias() += dB.transpose() * gpred;
    const RowMat dhenc = dA * w_zt;
    const RowMat dgpred = dB * w_zu;

    {
        const auto wh = mat(nets.params.get("enc.w_h"));
        auto dwx = mat(grads->get("enc.w_x"));
        auto dwh = mat(grads->get("enc.w_h"));
        auto db = vec(grads->get("enc.b"));
        RowVec carry = RowVec::Zero(henc.cols());
        for (Eigen::Index t = Ti; t-- > 0;) {
            const RowVec dh = dhenc.row(t) + carry;
            const RowVec dz = dh.array() * (1.0 - henc.row(t).array().square());
            dwx.noalias() += dz.transpose() * x.row(t);
            if (t > 0) dwh.noalias() += dz.transpose() * henc.row(t - 1);
            db += dz;
            carry.noalias() = dz * wh;
        }
    }
    {
        const auto wh = mat(nets.params.get("pred.w_h"));
        auto demb = mat(grads->get("pred.embed"));
        auto dwh = mat(grads->get("pred.w_h"));
        auto db = vec(grads->get("pred.b"));
        RowVec carry = RowVec::Zero(gpred.cols());
        for (Eigen::Index u = Wi; u-- > 0;) {
            const RowVec dg = dgpred.row(u) + carry;
            const RowVec dz = dg.array() * (1.0 - gpred.row(u).array().square());
            const std::size_t label = u == 0 ? kBlank : target[static_cast<std::size_t>(u - 1)];
            demb.col(static_cast<Eigen::Index>(label)) += dz.transpose();
            if (u > 0) dwh.noalias() += dz.transpose() * gpred.row(u - 1);
            db += dz;
            carry.noalias() = dz * wh;
        }
    }
    return res;
}

Hypothesis greedy_decode(const TransducerNets& nets, const FeatureMatrix& features, const std::string& utterance_id) {
    Hypothesis hyp;
    hyp.utterance_id = utterance_id.empty() ? features.utterance_id : utterance_id;
    if (features.rows == 0) return hyp;
    const RowMat henc = run_encoder(nets, normalized_input(nets, features));
    const auto w_zu = mat(nets.params.get("joint.w_zu"));
    const auto w_h = mat(nets.params.get("joint.w_h"));
    const auto b_h = vec(nets.params.get("joint.b_h"));
    const RowMat A = henc * mat(nets.params.get("joint.w_zt")).transpose();

    RowVec g = predictor_step(nets, kBlank, nullptr);
    RowVec B = g * w_zu.transpose() + vec(nets.params.get("joint.b_z"));
    RowMat logits(1, w_h.rows());
    for (Eigen::Index t = 0; t < A.rows(); ++t) {
        for (std::size_t emitted = 0; emitted < nets.arch.emission_cap; ++emitted) {
            const RowVec z = (A.row(t) + B).array().tanh();
            logits.noalias() = z * w_h.transpose();
            logits += b_h;
            log_softmax_rows(logits);
            Eigen::Index best = 0;
            for (Eigen::Index k = 1; k < logits.cols(); ++k) {
                if (logits(0, k) > logits(0, best)) best = k;
            }
            hyp.score += logits(0, best);
            if (best == static_cast<Eigen::Index>(kBlank)) break;
            hyp.tokens.push_back(static_cast<std::size_t>(best));
            g = predictor_step(nets, static_cast<std::size_t>(best), &g);
            B = g * w_zu.transpose() + vec(nets.params.get("joint.b_z"));
        }
    }
    return hyp;
}

Hypothesis greedy_decode(const TransducerNets& nets, const GatedStream& stream, const std::string& utterance_id) {
    if (stream.empty()) {
        Hypothesis h;
        h.utterance_id = utterance_id;
        return h;
    }
    return greedy_decode(nets, stream.as_matrix(), utterance_id);
}

TransducerTrainResult train_transducer(std::span<const TransducerExample> data, const TransducerTrainConfig& cfg,
                                       TransducerNets nets) {
    if (data.empty()) throw Error(ErrorKind::EmptyInput, "no transducer training data");
    if (cfg.batch_size == 0) throw Error(ErrorKind::Config, "batch_size must be positive");
    std::vector<FeatureMatrix> norm_inputs;
    norm_inputs.reserve(data.size());
    for (const auto& ex : data) {
        if (!ex.features || ex.features->rows == 0) throw Error(ErrorKind::EmptyInput, "empty training utterance");
        check_target(nets.arch, ex.target);
        norm_inputs.push_back(*ex.features);
    }
    fit_input_normalization(nets, norm_inputs);
    norm_inputs.clear();

    TransducerTrainResult result;
    TensorSet m = nets.params.like(0.0), v = nets.params.like(0.0);
    std::vector<std::size_t> order(data.size());
    std::uint64_t step = 0;
    const std::size_t total_steps = cfg.epochs * ((data.size() + cfg.batch_size - 1) / cfg.batch_size);
    std::vector<TensorSet> per_utt;
    std::vector<double> losses;

    for (std::size_t e = 0; e < cfg.epochs; ++e) {
        const TransducerNets last_good = nets;
        std::iota(order.begin(), order.end(), std::size_t{0});
        Rng rng(cfg.seed, 0x7000 + e);
        rng.shuffle(order.begin(), order.end());
        double epoch_sum = 0.0;
        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
            const std::size_t n = std::min(cfg.batch_size, order.size() - start);
            per_utt.assign(n, nets.params.like(0.0));
            losses.assign(n, 0.0);
            try {
                parallel_for(n, cfg.jobs, [&](std::size_t k) {
                    const auto& ex = data[order[start + k]];
                    if (cfg.input_noise <= 0.0) {
                        losses[k] = transducer_loss(nets, *ex.features, ex.target, &per_utt[k]).nll;
                        return;
                    }
                    FeatureMatrix noisy = *ex.features;
                    Rng noise(cfg.seed, (e + 1) * 0x100000 + order[start + k]);
                    const auto& sd = nets.buffers.get("norm.std").data;
                    const std::size_t D = nets.arch.flag_input ? noisy.cols - 1 : noisy.cols;
                    for (std::size_t r = 0; r < noisy.rows; ++r) {
                        for (std::size_t c = 0; c < D; ++c) noisy.at(r, c) += cfg.input_noise * sd[c] * noise.normal();
                    }
                    losses[k] = transducer_loss(nets, noisy, ex.target, &per_utt[k]).nll;
                });
            } catch (const Error& err) {
                throw TransducerDiverged("epoch " + std::to_string(e) + ": " + err.detail(), last_good);
            }
            TensorSet total = nets.params.like(0.0);
            double batch_loss = 0.0;
            for (std::size_t k = 0; k < n; ++k) {
                batch_loss += losses[k];
                for (std::size_t i = 0; i < total.tensors().size(); ++i) {
                    auto& dst = total.tensors()[i].data;
                    const auto& src = per_utt[k].tensors()[i].data;
                    for (std::size_t j = 0; j < dst.size(); ++j) dst[j] += src[j];
                }
            }
            for (auto& t : total.tensors()) {
                for (double& g : t.data) g /= static_cast<double>(n);
            }
            if (!std::isfinite(batch_loss) || !total.all_finite()) {
                throw TransducerDiverged("non-finite transducer loss at step " + std::to_string(step), last_good);
            }
            clip_grad_norm(total, cfg.clip_norm);
            ++step;
            AdamConfig adam = cfg.adam;
            if (cfg.cosine_decay) {
                const double progress = static_cast<double>(step - 1) / static_cast<double>(total_steps);
                adam.lr *= 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
            }
            adam_step(nets.params, total, m, v, step, adam);
            epoch_sum += batch_loss;
            if (e == 0) result.first_epoch_batch_loss.push_back(batch_loss / static_cast<double>(n));
        }
        result.epoch_loss.push_back(epoch_sum / static_cast<double>(data.size()));
    }
    result.nets = std::move(nets);
    return result;
}

Checkpoint transducer_to_checkpoint(const TransducerNets& nets) {
    Checkpoint ck;
    ck.kind = "transducer";
    ck.arch_json = nets.arch.to_json();
    for (const auto& t : nets.params.tensors()) ck.tensors.push_back(t);
    for (const auto& t : nets.buffers.tensors()) ck.tensors.push_back(t);
    return ck;
}

TransducerNets transducer_from_checkpoint(const Checkpoint& ck) {
    if (ck.kind != "transducer") throw Error(ErrorKind::UnsupportedFormat, "checkpoint kind '" + ck.kind + "' is not transducer");
    TransducerNets nets = init_transducer(TransducerArch::from_json(ck.arch_json), 0);
    auto load = [&](TensorSet& set) {
        for (auto& t : set.tensors()) {
            const auto it = std::find_if(ck.tensors.begin(), ck.tensors.end(), [&](const Tensor& c) { return c.name == t.name; });
            if (it == ck.tensors.end()) throw Error(ErrorKind::Shape, "checkpoint lacks tensor '" + t.name + "'");
            if (it->shape != t.shape) throw Error(ErrorKind::Shape, "tensor '" + t.name + "' has the wrong shape");
            t.data = it->data;
        }
    };
    load(nets.params);
    load(nets.buffers);
    return nets;
}

void save_transducer(const std::filesystem::path& path, const TransducerNets& nets) {
    write_checkpoint(path, transducer_to_checkpoint(nets));
}

TransducerNets load_transducer(const std::filesystem::path& path) {
    return transducer_from_checkpoint(read_checkpoint(path));
}

std::string hypothesis_line(const TransducerArch& arch, const Hypothesis& h) {
    const nlohmann::ordered_json j = {
        {"id", h.utterance_id}, {"tokens", decode_tokens(arch, h.tokens)}, {"score", h.score}};
    return j.dump();
}

void write_hypotheses(const std::filesystem::path& path, const TransducerArch& arch, const std::vector<Hypothesis>& hyps) {
    std::string text;
    for (const auto& h : hyps) {
        text += hypothesis_line(arch, h);
        text += '\n';
    }
    detail::write_text_file(path, text);
}

std::vector<HypothesisRecord> read_hypotheses(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorKind::Io, "cannot open " + path.string());
    std::vector<HypothesisRecord> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        try {
            const auto j = nlohmann::json::parse(line);
            HypothesisRecord r;
            r.utterance_id = j.at("id");
            r.tokens = j.at("tokens").get<std::vector<std::string>>();
            r.score = j.at("score");
            out.push_back(std::move(r));
        } catch (const nlohmann::json::exception& e) {
            throw Error(ErrorKind::Parse, path.string() + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
    return out;
}

} // namespace stuttergate
