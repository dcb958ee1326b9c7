#include "stuttergate/classifier.h"

#include "stuttergate/metrics.h"
#include "stuttergate/random.h"

#include <Eigen/Dense>
#include <json.hpp>

#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>

namespace stuttergate {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowVec = Eigen::Matrix<double, 1, Eigen::Dynamic>;
using StridedMap = Eigen::Map<const RowMat, 0, Eigen::OuterStride<>>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

ConstMap as_matrix(const Tensor& t) {
    const std::size_t cols = t.shape.size() > 1 ? t.shape[1] : t.shape[0];
    const std::size_t rows = t.shape.size() > 1 ? t.shape[0] : 1;
    return ConstMap(t.data.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

MutMap as_matrix(Tensor& t) {
    const std::size_t cols = t.shape.size() > 1 ? t.shape[1] : t.shape[0];
    const std::size_t rows = t.shape.size() > 1 ? t.shape[0] : 1;
    return MutMap(t.data.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

Eigen::Map<const RowVec> as_row(const Tensor& t) {
    return Eigen::Map<const RowVec>(t.data.data(), static_cast<Eigen::Index>(t.data.size()));
}

Eigen::Map<RowVec> as_row(Tensor& t) {
    return Eigen::Map<RowVec>(t.data.data(), static_cast<Eigen::Index>(t.data.size()));
}

double sigmoid(double z) {
    if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
    const double e = std::exp(z);
    return e / (1.0 + e);
}

double softplus(double z) {
    return z > 0.0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z));
}

double open_unit(double p) {
    return std::clamp(p, std::numeric_limits<double>::min(), std::nextafter(1.0, 0.0));
}

struct BatchNormCache {
    RowMat xhat;
    RowVec mean;
    RowVec var;
    RowVec invstd;
};

void bn_forward(const RowMat& a, const Tensor& gamma, const Tensor& beta, const Tensor& running_mean,
                const Tensor& running_var, Mode mode, double eps, BatchNormCache& cache, RowMat& y) {
    if (mode == Mode::Train) {
        cache.mean = a.colwise().mean();
        cache.var = (a.rowwise() - cache.mean).array().square().colwise().mean();
    } else {
        cache.mean = as_row(running_mean);
        cache.var = as_row(running_var);
    }
    cache.invstd = (cache.var.array() + eps).rsqrt();
    cache.xhat = (a.rowwise() - cache.mean).array().rowwise() * cache.invstd.array();
    y = (cache.xhat.array().rowwise() * as_row(gamma).array()).rowwise() + as_row(beta).array();
}

RowMat bn_backward(const RowMat& dy, const Tensor& gamma, const BatchNormCache& cache, Mode mode, Tensor& dgamma,
                   Tensor& dbeta) {
    as_row(dgamma) += (dy.array() * cache.xhat.array()).colwise().sum().matrix();
    as_row(dbeta) += dy.colwise().sum();
    const RowMat dxhat = dy.array().rowwise() * as_row(gamma).array();
    if (mode == Mode::Eval) {
        return dxhat.array().rowwise() * cache.invstd.array();
    }
    const double n = static_cast<double>(dy.rows());
    const RowVec sum_dxhat = dxhat.colwise().sum();
    const RowVec sum_dxhat_xhat = (dxhat.array() * cache.xhat.array()).colwise().sum();
    RowMat dx = (n * dxhat.array()).rowwise() - sum_dxhat.array();
    dx = dx.array() - cache.xhat.array().rowwise() * sum_dxhat_xhat.array();
    return dx.array().rowwise() * (cache.invstd.array() / n);
}

struct Pass {
    std::size_t batch = 0;
    Mode mode = Mode::Eval;
    std::vector<const double*> inputs;
    RowMat a1, h1;
    BatchNormCache bn1;
    RowMat a2, h2;
    BatchNormCache bn2;
    RowMat pooled;
    RowMat f1, r1, h3;
    BatchNormCache bn3;
    Eigen::VectorXd z;
};

StridedMap conv_input(const double* data, std::size_t out_len, std::size_t kernel, std::size_t channels,
                      std::size_t stride) {
    return StridedMap(data, static_cast<Eigen::Index>(out_len), static_cast<Eigen::Index>(kernel * channels),
                      Eigen::OuterStride<>(static_cast<Eigen::Index>(stride * channels)));
}

const char* first_nonfinite_layer(const Pass& p) {
    if (!p.a1.allFinite()) return "conv1";
    if (!p.h1.allFinite()) return "bn1";
    if (!p.a2.allFinite()) return "conv2";
    if (!p.h2.allFinite()) return "bn2";
    if (!p.f1.allFinite()) return "fc1";
    if (!p.h3.allFinite()) return "bn3";
    return "fc2";
}

void run_forward(const TrainState& s, std::span<const std::span<const double>> windows, Mode mode, Pass& p) {
    const auto& a = s.arch;
    const auto B = static_cast<Eigen::Index>(windows.size());
    const auto L1 = static_cast<Eigen::Index>(a.conv1_len());
    const auto L2 = static_cast<Eigen::Index>(a.conv2_len());
    const auto C1 = static_cast<Eigen::Index>(a.conv1_channels);
    const auto C2 = static_cast<Eigen::Index>(a.conv2_channels);
    const auto H = static_cast<Eigen::Index>(a.fc1_width);
    p.batch = windows.size();
    p.mode = mode;
    p.inputs.clear();
    for (const auto& w : windows) {
        if (w.size() != a.input_size()) {
            throw Error(ErrorKind::Shape, "classifier input has " + std::to_string(w.size()) + " values, expected " +
                                              std::to_string(a.in_rows) + "x" + std::to_string(a.n_mels));
        }
        p.inputs.push_back(w.data());
    }

    const auto W1 = as_matrix(s.params.get("conv1.weight"));
    const auto b1 = as_row(s.params.get("conv1.bias"));
    p.a1.resize(B * L1, C1);
    for (Eigen::Index b = 0; b < B; ++b) {
        const auto X = conv_input(p.inputs[static_cast<std::size_t>(b)], a.conv1_len(), a.conv1_kernel, a.n_mels,
                                  a.conv1_stride);
        p.a1.middleRows(b * L1, L1).noalias() = X * W1.transpose();
        p.a1.middleRows(b * L1, L1).rowwise() += b1;
    }
    RowMat y1;
    bn_forward(p.a1, s.params.get("bn1.gamma"), s.params.get("bn1.beta"), s.buffers.get("bn1.running_mean"),
               s.buffers.get("bn1.running_var"), mode, a.bn_eps, p.bn1, y1);
    p.h1 = y1.cwiseMax(0.0);

    const auto W2 = as_matrix(s.params.get("conv2.weight"));
    const auto b2 = as_row(s.params.get("conv2.bias"));
    p.a2.resize(B * L2, C2);
    for (Eigen::Index b = 0; b < B; ++b) {
        const auto X = conv_input(p.h1.data() + b * L1 * C1, a.conv2_len(), a.conv2_kernel, a.conv1_channels,
                                  a.conv2_stride);
        p.a2.middleRows(b * L2, L2).noalias() = X * W2.transpose();
        p.a2.middleRows(b * L2, L2).rowwise() += b2;
    }
    RowMat y2;
    bn_forward(p.a2, s.params.get("bn2.gamma"), s.params.get("bn2.beta"), s.buffers.get("bn2.running_mean"),
               s.buffers.get("bn2.running_var"), mode, a.bn_eps, p.bn2, y2);
    p.h2 = y2.cwiseMax(0.0);

    const auto F = static_cast<Eigen::Index>(a.fc1_inputs());
    p.pooled.resize(B, F);
    for (Eigen::Index b = 0; b < B; ++b) {
        if (a.pooling == Pooling::Flatten) {
            p.pooled.row(b) = Eigen::Map<const RowVec>(p.h2.data() + b * L2 * C2, F);
        } else {
            p.pooled.row(b) = p.h2.middleRows(b * L2, L2).colwise().mean();
        }
    }

    const auto Wf1 = as_matrix(s.params.get("fc1.weight"));
    const auto bf1 = as_row(s.params.get("fc1.bias"));
    p.f1.resize(B, H);
    for (Eigen::Index b = 0; b < B; ++b) {
        p.f1.row(b).noalias() = p.pooled.row(b) * Wf1.transpose();
    }
    p.f1.rowwise() += bf1;
    p.r1 = p.f1.cwiseMax(0.0);
    bn_forward(p.r1, s.params.get("bn3.gamma"), s.params.get("bn3.beta"), s.buffers.get("bn3.running_mean"),
               s.buffers.get("bn3.running_var"), mode, a.bn_eps, p.bn3, p.h3);

    const auto wf2 = as_row(s.params.get("fc2.weight"));
    const double bf2 = s.params.get("fc2.bias").data[0];
    p.z.resize(B);
    for (Eigen::Index b = 0; b < B; ++b) {
        p.z[b] = p.h3.row(b).dot(wf2) + bf2;
    }
    if (!p.z.allFinite()) {
        throw Error(ErrorKind::NumericFailure, std::string("non-finite activation in layer ") + first_nonfinite_layer(p));
    }
}

void run_backward(const TrainState& s, Pass& p, const Eigen::VectorXd& dz, TensorSet& g) {
    const auto& a = s.arch;
    const auto B = static_cast<Eigen::Index>(p.batch);
    const auto L1 = static_cast<Eigen::Index>(a.conv1_len());
    const auto L2 = static_cast<Eigen::Index>(a.conv2_len());
    const auto C1 = static_cast<Eigen::Index>(a.conv1_channels);
    const auto C2 = static_cast<Eigen::Index>(a.conv2_channels);
    const auto F = static_cast<Eigen::Index>(a.fc1_inputs());

    const auto wf2 = as_row(s.params.get("fc2.weight"));
    as_row(g.get("fc2.weight")) += dz.transpose() * p.h3;
    g.get("fc2.bias").data[0] += dz.sum();
    const RowMat dh3 = dz * wf2;

    const RowMat dr1 = bn_backward(dh3, s.params.get("bn3.gamma"), p.bn3, p.mode, g.get("bn3.gamma"), g.get("bn3.beta"));
    const RowMat df1 = dr1.array() * (p.f1.array() > 0.0).cast<double>();
    as_matrix(g.get("fc1.weight")).noalias() += df1.transpose() * p.pooled;
    as_row(g.get("fc1.bias")) += df1.colwise().sum();
    const RowMat dpooled = df1 * as_matrix(s.params.get("fc1.weight"));

    RowMat dh2(B * L2, C2);
    for (Eigen::Index b = 0; b < B; ++b) {
        if (a.pooling == Pooling::Flatten) {
            Eigen::Map<RowVec>(dh2.data() + b * L2 * C2, F) = dpooled.row(b);
        } else {
            dh2.middleRows(b * L2, L2).rowwise() = dpooled.row(b) / static_cast<double>(L2);
        }
    }
    const RowMat dy2 = dh2.array() * (p.h2.array() > 0.0).cast<double>();
    const RowMat da2 = bn_backward(dy2, s.params.get("bn2.gamma"), p.bn2, p.mode, g.get("bn2.gamma"), g.get("bn2.beta"));

    const auto W2 = as_matrix(s.params.get("conv2.weight"));
    auto dW2 = as_matrix(g.get("conv2.weight"));
    RowMat dh1 = RowMat::Zero(B * L1, C1);
    const auto span2 = static_cast<Eigen::Index>(a.conv2_kernel) * C1;
    const auto stride2 = static_cast<Eigen::Index>(a.conv2_stride) * C1;
    for (Eigen::Index b = 0; b < B; ++b) {
        const auto X = conv_input(p.h1.data() + b * L1 * C1, a.conv2_len(), a.conv2_kernel, a.conv1_channels,
                                  a.conv2_stride);
        const auto da2_b = da2.middleRows(b * L2, L2);
        dW2.noalias() += da2_b.transpose() * X;
        const RowMat dX = da2_b * W2;
        double* dst = dh1.data() + b * L1 * C1;
        for (Eigen::Index t = 0; t < L2; ++t) {
            Eigen::Map<RowVec>(dst + t * stride2, span2) += dX.row(t);
        }
    }
    as_row(g.get("conv2.bias")) += da2.colwise().sum();

    const RowMat dy1 = dh1.array() * (p.h1.array() > 0.0).cast<double>();
    const RowMat da1 = bn_backward(dy1, s.params.get("bn1.gamma"), p.bn1, p.mode, g.get("bn1.gamma"), g.get("bn1.beta"));
    auto dW1 = as_matrix(g.get("conv1.weight"));
    for (Eigen::Index b = 0; b < B; ++b) {
        const auto X = conv_input(p.inputs[static_cast<std::size_t>(b)], a.conv1_len(), a.conv1_kernel, a.n_mels,
                                  a.conv1_stride);
        dW1.noalias() += da1.middleRows(b * L1, L1).transpose() * X;
    }
    as_row(g.get("conv1.bias")) += da1.colwise().sum();
}

void update_running(TrainState& s, const char* prefix, const BatchNormCache& cache, std::size_t n) {
    const double m = s.arch.bn_momentum;
    auto rm = as_row(s.buffers.get(std::string(prefix) + ".running_mean"));
    auto rv = as_row(s.buffers.get(std::string(prefix) + ".running_var"));
    const double unbias = n > 1 ? static_cast<double>(n) / static_cast<double>(n - 1) : 1.0;
    rm = (1.0 - m) * rm + m * cache.mean;
    rv = (1.0 - m) * rv + (m * unbias) * cache.var;
}

double weighted_bce(double z, double y, double pos_weight) {
    return pos_weight * y * softplus(-z) + (1.0 - y) * softplus(z);
}

double weighted_bce_grad(double z, double y, double pos_weight) {
    const double p = sigmoid(z);
    return pos_weight * y * (p - 1.0) + (1.0 - y) * p;
}

} // namespace

void ClassifierArch::validate() const {
    if (n_mels == 0 || in_rows == 0) throw Error(ErrorKind::Config, "classifier input must be non-empty");
    if (conv1_kernel == 0 || conv1_stride == 0 || conv2_kernel == 0 || conv2_stride == 0) {
        throw Error(ErrorKind::Config, "conv kernels and strides must be positive");
    }
    if (conv1_kernel > in_rows) throw Error(ErrorKind::Config, "conv1 kernel longer than the input");
    if (conv2_kernel > conv1_len()) throw Error(ErrorKind::Config, "conv2 kernel longer than the conv1 output");
    if (conv1_channels == 0 || conv2_channels == 0 || fc1_width == 0) {
        throw Error(ErrorKind::Config, "layer widths must be positive");
    }
    if (!(bn_eps > 0.0) || !(bn_momentum > 0.0 && bn_momentum <= 1.0)) {
        throw Error(ErrorKind::Config, "bn_eps must be > 0 and bn_momentum in (0, 1]");
    }
}

std::string ClassifierArch::to_json() const {
    nlohmann::ordered_json j = {
        {"in_rows", in_rows},
        {"n_mels", n_mels},
        {"conv1_channels", conv1_channels},
        {"conv1_kernel", conv1_kernel},
        {"conv1_stride", conv1_stride},
        {"conv2_channels", conv2_channels},
        {"conv2_kernel", conv2_kernel},
        {"conv2_stride", conv2_stride},
        {"fc1_width", fc1_width},
        {"pooling", pooling == Pooling::Flatten ? "flatten" : "global_average"},
        {"bn_eps", bn_eps},
        {"bn_momentum", bn_momentum},
    };
    return j.dump();
}

ClassifierArch ClassifierArch::from_json(const std::string& text) {
    try {
        const auto j = nlohmann::json::parse(text);
        ClassifierArch a;
        a.in_rows = j.at("in_rows");
        a.n_mels = j.at("n_mels");
        a.conv1_channels = j.at("conv1_channels");
        a.conv1_kernel = j.at("conv1_kernel");
        a.conv1_stride = j.at("conv1_stride");
        a.conv2_channels = j.at("conv2_channels");
        a.conv2_kernel = j.at("conv2_kernel");
        a.conv2_stride = j.at("conv2_stride");
        a.fc1_width = j.at("fc1_width");
        const auto pooling = j.at("pooling").get<std::string>();
        if (pooling == "flatten") {
            a.pooling = Pooling::Flatten;
        } else if (pooling == "global_average") {
            a.pooling = Pooling::GlobalAverage;
        } else {
            throw Error(ErrorKind::Config, "unknown pooling '" + pooling + "'");
        }
        a.bn_eps = j.at("bn_eps");
        a.bn_momentum = j.at("bn_momentum");
        a.validate();
        return a;
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorKind::Parse, std::string("classifier arch: ") + e.what());
    }
}

TrainState init_classifier(const ClassifierArch& arch, std::uint64_t seed) {
    arch.validate();
    TrainState s;
    s.arch = arch;
    s.seed = seed;
    Rng rng(seed, 0x636c66);
    auto he = [&](Tensor& t, std::size_t fan_in) {
        const double scale = std::sqrt(2.0 / static_cast<double>(fan_in));
        for (double& v : t.data) v = scale * rng.normal();
    };
    const std::size_t c1 = arch.conv1_channels, c2 = arch.conv2_channels, h = arch.fc1_width;
    he(s.params.add("conv1.weight", {c1, arch.conv1_kernel * arch.n_mels}), arch.conv1_kernel * arch.n_mels);
    s.params.add("conv1.bias", {c1});
    s.params.add("bn1.gamma", {c1}, 1.0);
    s.params.add("bn1.beta", {c1});
    he(s.params.add("conv2.weight", {c2, arch.conv2_kernel * c1}), arch.conv2_kernel * c1);
    s.params.add("conv2.bias", {c2});
    s.params.add("bn2.gamma", {c2}, 1.0);
    s.params.add("bn2.beta", {c2});
    he(s.params.add("fc1.weight", {h, arch.fc1_inputs()}), arch.fc1_inputs());
    s.params.add("fc1.bias", {h});
    s.params.add("bn3.gamma", {h}, 1.0);
    s.params.add("bn3.beta", {h});
    {
        auto& w = s.params.add("fc2.weight", {1, h});
        const double scale = std::sqrt(1.0 / static_cast<double>(h));
        for (double& v : w.data) v = scale * rng.normal();
    }
    s.params.add("fc2.bias", {1});
    for (const char* bn : {"bn1", "bn2", "bn3"}) {
        const std::size_t n = std::string(bn) == "bn1" ? c1 : std::string(bn) == "bn2" ? c2 : h;
        s.buffers.add(std::string(bn) + ".running_mean", {n}, 0.0);
        s.buffers.add(std::string(bn) + ".running_var", {n}, 1.0);
    }
    s.adam_m = s.params.like(0.0);
    s.adam_v = s.params.like(0.0);
    return s;
}

void zero_classifier_weights(TrainState& state) {
    for (auto& t : state.params.tensors()) {
        if (t.name.ends_with(".gamma")) continue;
        std::fill(t.data.begin(), t.data.end(), 0.0);
    }
}

Checkpoint to_checkpoint(const TrainState& s) {
    Checkpoint ck;
    ck.kind = "classifier";
    ck.arch_json = s.arch.to_json();
    for (const auto& t : s.params.tensors()) ck.tensors.push_back(t);
    for (const auto& t : s.buffers.tensors()) ck.tensors.push_back(t);
    for (const auto& t : s.adam_m.tensors()) ck.tensors.push_back({"adam_m/" + t.name, t.shape, 0.0}), ck.tensors.back().data = t.data;
    for (const auto& t : s.adam_v.tensors()) ck.tensors.push_back({"adam_v/" + t.name, t.shape, 0.0}), ck.tensors.back().data = t.data;
    Tensor meta("meta/counters", {3});
    meta.data = {static_cast<double>(s.step), static_cast<double>(s.epoch), static_cast<double>(s.seed)};
    ck.tensors.push_back(std::move(meta));
    return ck;
}

TrainState classifier_from_checkpoint(const Checkpoint& ck) {
    if (ck.kind != "classifier") throw Error(ErrorKind::UnsupportedFormat, "checkpoint kind '" + ck.kind + "' is not classifier");
    const auto arch = ClassifierArch::from_json(ck.arch_json);
    TrainState s = init_classifier(arch, 0);
    auto find = [&](const std::string& name) -> const Tensor& {
        for (const auto& t : ck.tensors) {
            if (t.name == name) return t;
        }
        throw Error(ErrorKind::Shape, "checkpoint lacks tensor '" + name + "'");
    };
    auto load = [&](TensorSet& set, const std::string& prefix) {
        for (auto& t : set.tensors()) {
            const Tensor& src = find(prefix + t.name);
            if (src.shape != t.shape) throw Error(ErrorKind::Shape, "tensor '" + src.name + "' has the wrong shape");
            t.data = src.data;
        }
    };
    load(s.params, "");
    load(s.buffers, "");
    load(s.adam_m, "adam_m/");
    load(s.adam_v, "adam_v/");
    const Tensor& meta = find("meta/counters");
    s.step = static_cast<std::uint64_t>(meta.data.at(0));
    s.epoch = static_cast<std::uint64_t>(meta.data.at(1));
    s.seed = static_cast<std::uint64_t>(meta.data.at(2));
    return s;
}

void save_classifier(const std::filesystem::path& path, const TrainState& state) {
    write_checkpoint(path, to_checkpoint(state));
}

TrainState load_classifier(const std::filesystem::path& path) {
    return classifier_from_checkpoint(read_checkpoint(path));
}

double forward(const TrainState& state, std::span<const double> features, Mode mode) {
    if (mode == Mode::Train) {
        throw Error(ErrorKind::Config, "train-mode forward needs a batch; use train_classifier");
    }
    Pass p;
    const std::span<const double> one[] = {features};
    run_forward(state, one, Mode::Eval, p);
    return open_unit(sigmoid(p.z[0]));
}

double forward(const TrainState& state, const FeatureMatrix& features, Mode mode) {
    if (features.rows != state.arch.in_rows || features.cols != state.arch.n_mels) {
        throw Error(ErrorKind::Shape, "feature matrix is " + std::to_string(features.rows) + "x" +
                                          std::to_string(features.cols) + ", classifier expects " +
                                          std::to_string(state.arch.in_rows) + "x" + std::to_string(state.arch.n_mels));
    }
    return forward(state, std::span<const double>(features.data), mode);
}

std::vector<double> forward_batch(const TrainState& state, std::span<const std::span<const double>> windows) {
    std::vector<double> out;
    out.reserve(windows.size());
    constexpr std::size_t kChunk = 256;
    Pass p;
    for (std::size_t start = 0; start < windows.size(); start += kChunk) {
        const auto chunk = windows.subspan(start, std::min(kChunk, windows.size() - start));
        run_forward(state, chunk, Mode::Eval, p);
        for (Eigen::Index b = 0; b < p.z.size(); ++b) out.push_back(open_unit(sigmoid(p.z[b])));
    }
    return out;
}

double classifier_loss(const TrainState& state, std::span<const double> features, double label, double pos_weight,
                       TensorSet* grads) {
    Pass p;
    const std::span<const double> one[] = {features};
    run_forward(state, one, Mode::Eval, p);
    const double z = p.z[0];
    if (grads) {
        Eigen::VectorXd dz(1);
        dz[0] = weighted_bce_grad(z, label, pos_weight);
        run_backward(state, p, dz, *grads);
    }
    return weighted_bce(z, label, pos_weight);
}

namespace {

std::vector<bool> relu_pattern(const TrainState& state, std::span<const double> features) {
    Pass p;
    const std::span<const double> one[] = {features};
    run_forward(state, one, Mode::Eval, p);
    std::vector<bool> mask;
    for (const RowMat* m : {&p.h1, &p.h2, &p.f1}) {
        for (Eigen::Index i = 0; i < m->size(); ++i) mask.push_back(m->data()[i] > 0.0);
    }
    return mask;
}

} // namespace

GradCheckResult grad_check(const TrainState& state, std::span<const double> features, double label, double h,
                           double pos_weight) {
    TensorSet analytic = state.params.like(0.0);
    classifier_loss(state, features, label, pos_weight, &analytic);
    const auto base_mask = relu_pattern(state, features);

    GradCheckResult r;
    TrainState probe = state;
    for (std::size_t t = 0; t < probe.params.tensors().size(); ++t) {
        auto& values = probe.params.tensors()[t].data;
        for (std::size_t i = 0; i < values.size(); ++i) {
            const double orig = values[i];
            values[i] = orig + h;
            const double up = classifier_loss(probe, features, label, pos_weight, nullptr);
            const bool kink_up = relu_pattern(probe, features) != base_mask;
            values[i] = orig - h;
            const double down = classifier_loss(probe, features, label, pos_weight, nullptr);
            const bool kink_down = relu_pattern(probe, features) != base_mask;
            values[i] = orig;
            if (kink_up || kink_down) {
                ++r.skipped_kinks;
                continue;
            }
            const double numeric = (up - down) / (2.0 * h);
            const double a = analytic.tensors()[t].data[i];
            const double abs_err = std::abs(a - numeric);
            const double rel_err = abs_err / std::max({std::abs(a), std::abs(numeric), 1e-4});
            r.max_abs_error = std::max(r.max_abs_error, abs_err);
            r.max_rel_error = std::max(r.max_rel_error, rel_err);
            ++r.checked;
        }
    }
    return r;
}

ClassifierTrainResult train_classifier(std::span<const ClassifierExample> data, const ClassifierTrainConfig& cfg,
                                       const ClassifierArch& arch) {
    return train_classifier(data, cfg, init_classifier(arch, cfg.seed));
}

ClassifierTrainResult train_classifier(std::span<const ClassifierExample> data, const ClassifierTrainConfig& cfg,
                                       TrainState state) {
    if (cfg.batch_size < 2) throw Error(ErrorKind::Config, "batch_size must be >= 2 for batch normalization");
    std::size_t n_pos = 0;
    for (const auto& ex : data) {
        if (!(ex.label >= 0.0 && ex.label <= 1.0)) throw Error(ErrorKind::Domain, "label outside [0, 1]");
        if (ex.label >= 0.5) ++n_pos;
    }
    const std::size_t n_neg = data.size() - n_pos;
    if (n_pos == 0 || n_neg == 0) {
        throw Error(ErrorKind::DegenerateData, "training data has a single class (" + std::to_string(n_pos) +
                                                   " positive, " + std::to_string(n_neg) + " negative)");
    }

    ClassifierTrainResult result;
    result.pos_weight = cfg.pos_weight > 0.0 ? cfg.pos_weight : static_cast<double>(n_neg) / static_cast<double>(n_pos);

    std::vector<std::size_t> order(data.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    TensorSet grads = state.params.like(0.0);
    Pass pass;
    std::vector<std::span<const double>> batch;
    std::vector<double> epoch_posteriors;
    std::vector<std::uint8_t> epoch_labels;

    for (std::size_t e = 0; e < cfg.epochs; ++e) {
        const TrainState last_good = state;
        std::iota(order.begin(), order.end(), std::size_t{0});
        Rng rng(cfg.seed, 0x5000 + state.epoch);
        rng.shuffle(order.begin(), order.end());
        double loss_sum = 0.0;
        std::size_t seen = 0;
        epoch_posteriors.clear();
        epoch_labels.clear();
        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
            const std::size_t n = std::min(cfg.batch_size, order.size() - start);
            if (n < 2) break;
            batch.clear();
            for (std::size_t k = 0; k < n; ++k) batch.push_back(data[order[start + k]].features);
            try {
                run_forward(state, batch, Mode::Train, pass);
            } catch (const Error& err) {
                throw ClassifierDiverged(std::string("epoch ") + std::to_string(state.epoch) + ": " + err.detail(),
                                         last_good);
            }
            Eigen::VectorXd dz(static_cast<Eigen::Index>(n));
            double batch_loss = 0.0;
            for (std::size_t k = 0; k < n; ++k) {
                const double y = data[order[start + k]].label;
                const double z = pass.z[static_cast<Eigen::Index>(k)];
                batch_loss += weighted_bce(z, y, result.pos_weight);
                dz[static_cast<Eigen::Index>(k)] = weighted_bce_grad(z, y, result.pos_weight) / static_cast<double>(n);
                epoch_posteriors.push_back(sigmoid(z));
                epoch_labels.push_back(y >= 0.5 ? 1 : 0);
            }
            if (!std::isfinite(batch_loss)) {
                throw ClassifierDiverged("loss became non-finite at step " + std::to_string(state.step), last_good);
            }
            loss_sum += batch_loss;
            seen += n;
            grads.fill(0.0);
            run_backward(state, pass, dz, grads);
            ++state.step;
            adam_step(state.params, grads, state.adam_m, state.adam_v, state.step, cfg.adam);
            update_running(state, "bn1", pass.bn1, static_cast<std::size_t>(pass.a1.rows()));
            update_running(state, "bn2", pass.bn2, static_cast<std::size_t>(pass.a2.rows()));
            update_running(state, "bn3", pass.bn3, n);
            if (!state.params.all_finite()) {
                throw ClassifierDiverged("parameters became non-finite at step " + std::to_string(state.step), last_good);
            }
        }
        ++state.epoch;
        EpochMetrics m;
        m.epoch = state.epoch;
        m.loss = seen ? loss_sum / static_cast<double>(seen) : 0.0;
        m.pr_auc = pr_auc(epoch_posteriors, epoch_labels).pr_auc;
        result.history.push_back(m);
    }
    result.state = std::move(state);
    return result;
}

void write_history_csv(const std::filesystem::path& path, const std::vector<EpochMetrics>& history) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error(ErrorKind::Io, "cannot write " + path.string());
    out << "epoch,loss,pr_auc\n";
    char buf[96];
    for (const auto& m : history) {
        std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g\n", m.epoch, m.loss, m.pr_auc);
        out << buf;
    }
}

std::vector<EpochMetrics> read_history_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorKind::Io, "cannot open " + path.string());
    std::string line;
    std::getline(in, line);
    if (line != "epoch,loss,pr_auc") throw Error(ErrorKind::Parse, path.string() + ": unexpected header");
    std::vector<EpochMetrics> out;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        EpochMetrics m;
        if (std::sscanf(line.c_str(), "%zu,%lf,%lf", &m.epoch, &m.loss, &m.pr_auc) != 3) {
            throw Error(ErrorKind::Parse, path.string() + ": bad row '" + line + "'");
        }
        out.push_back(m);
    }
    return out;
}

PosteriorTrack predict_track(const ClassifierFeatureBank& bank, const TrainState& state) {
    std::vector<std::span<const double>> windows;
    windows.reserve(bank.n_frames);
    for (std::size_t i = 0; i < bank.n_frames; ++i) windows.push_back(bank.window_data(i));
    return make_posterior_track(forward_batch(state, windows), bank.logmel.utterance_id);
}

PosteriorTrack predict_track(const AudioBuffer& audio, const TrainState& state, const MelConfig& mel,
                             const std::string& utterance_id) {
    return predict_track(classifier_feature_bank(audio, mel, utterance_id), state);
}

} // namespace stuttergate
