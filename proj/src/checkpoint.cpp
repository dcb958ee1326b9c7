#include "stuttergate/checkpoint.h"

#include "stuttergate/detail/binary_io.h"
#include "stuttergate/error.h"

#include <cmath>
#include <functional>
#include <numeric>

namespace stuttergate {

Tensor::Tensor(std::string n, std::vector<std::size_t> s, double fill) : name(std::move(n)), shape(std::move(s)) {
    data.assign(numel(), fill);
}

std::size_t Tensor::numel() const {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

Tensor& TensorSet::add(std::string name, std::vector<std::size_t> shape, double fill) {
    if (contains(name)) throw Error(ErrorKind::Config, "duplicate tensor '" + name + "'");
    tensors_.emplace_back(std::move(name), std::move(shape), fill);
    return tensors_.back();
}

Tensor& TensorSet::get(std::string_view name) {
    for (auto& t : tensors_) {
        if (t.name == name) return t;
    }
    throw Error(ErrorKind::Shape, "missing tensor '" + std::string(name) + "'");
}

const Tensor& TensorSet::get(std::string_view name) const {
    return const_cast<TensorSet*>(this)->get(name);
}

bool TensorSet::contains(std::string_view name) const {
    for (const auto& t : tensors_) {
        if (t.name == name) return true;
    }
    return false;
}

std::size_t TensorSet::numel() const {
    std::size_t n = 0;
    for (const auto& t : tensors_) n += t.numel();
    return n;
}

TensorSet TensorSet::like(double fill) const {
    TensorSet out;
    for (const auto& t : tensors_) out.add(t.name, t.shape, fill);
    return out;
}

void TensorSet::fill(double v) {
    for (auto& t : tensors_) std::fill(t.data.begin(), t.data.end(), v);
}

bool TensorSet::all_finite() const {
    for (const auto& t : tensors_) {
        for (double v : t.data) {
            if (!std::isfinite(v)) return false;
        }
    }
    return true;
}

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ck) {
    detail::ByteWriter w;
    w.raw("SGCK");
    w.u16(kCheckpointVersion);
    w.str(ck.kind);
    w.str(ck.arch_json);
    w.u32(static_cast<std::uint32_t>(ck.tensors.size()));
    for (const auto& t : ck.tensors) {
        w.str(t.name);
        w.u8(static_cast<std::uint8_t>(t.shape.size()));
        for (auto d : t.shape) w.u32(static_cast<std::uint32_t>(d));
        for (double v : t.data) w.f64(v);
    }
    return w.take();
}

Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes) {
    detail::ByteReader r(bytes);
    r.expect_magic("SGCK");
    const auto version = r.u16();
    if (version != kCheckpointVersion) {
        throw Error(ErrorKind::UnsupportedFormat, "SGCK version " + std::to_string(version));
    }
    Checkpoint ck;
    ck.kind = r.str();
    ck.arch_json = r.str();
    const auto n = r.u32();
    for (std::uint32_t i = 0; i < n; ++i) {
        Tensor t;
        t.name = r.str();
        const auto ndim = r.u8();
        for (std::uint8_t d = 0; d < ndim; ++d) t.shape.push_back(r.u32());
        t.data.resize(t.numel());
        for (double& v : t.data) v = r.f64();
        ck.tensors.push_back(std::move(t));
    }
    if (!r.done()) throw Error(ErrorKind::UnsupportedFormat, "trailing bytes after SGCK payload");
    return ck;
}

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ck) {
    detail::write_file_bytes(path, encode_checkpoint(ck));
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
    return decode_checkpoint(detail::read_file_bytes(path));
}

void adam_step(TensorSet& params, const TensorSet& grads, TensorSet& m, TensorSet& v, std::uint64_t step,
               const AdamConfig& cfg) {
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step));
    auto& ps = params.tensors();
    for (std::size_t t = 0; t < ps.size(); ++t) {
        auto& p = ps[t].data;
        const auto& g = grads.tensors()[t].data;
        auto& mt = m.tensors()[t].data;
        auto& vt = v.tensors()[t].data;
        for (std::size_t i = 0; i < p.size(); ++i) {
            mt[i] = cfg.beta1 * mt[i] + (1.0 - cfg.beta1) * g[i];
            vt[i] = cfg.beta2 * vt[i] + (1.0 - cfg.beta2) * g[i] * g[i];
            const double mhat = mt[i] / bc1;
            const double vhat = vt[i] / bc2;
            p[i] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
        }
    }
}

double clip_grad_norm(TensorSet& grads, double max_norm) {
    double sq = 0.0;
    for (const auto& t : grads.tensors()) {
        for (double g : t.data) sq += g * g;
    }
    const double norm = std::sqrt(sq);
    if (max_norm > 0.0 && norm > max_norm) {
        const double scale = max_norm / norm;
        for (auto& t : grads.tensors()) {
            for (double& g : t.data) g *= scale;
        }
    }
    return norm;
}

} // namespace stuttergate
