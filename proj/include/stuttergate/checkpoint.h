#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace stuttergate {

struct Tensor {
    std::string name;
    std::vector<std::size_t> shape;
    std::vector<double> data;

    Tensor() = default;
    Tensor(std::string n, std::vector<std::size_t> s, double fill = 0.0);

    std::size_t numel() const;
    bool operator==(const Tensor&) const = default;
};

/// Ordered, named tensors. Order is part of the checkpoint layout.
class TensorSet {
public:
    Tensor& add(std::string name, std::vector<std::size_t> shape, double fill = 0.0);
    Tensor& get(std::string_view name);
    const Tensor& get(std::string_view name) const;
    bool contains(std::string_view name) const;

    std::vector<Tensor>& tensors() { return tensors_; }
    const std::vector<Tensor>& tensors() const { return tensors_; }
    std::size_t numel() const;

    /// Same names and shapes, every entry set to `fill`.
    TensorSet like(double fill = 0.0) const;
    void fill(double v);
    bool all_finite() const;
    bool operator==(const TensorSet&) const = default;

private:
    std::vector<Tensor> tensors_;
};

// "SGCK" container: magic, u16 version, kind string, arch JSON string, then
// u32 tensor count and per tensor: name, u8 ndim, u32 dims, row-major f64 LE.
inline constexpr std::uint16_t kCheckpointVersion = 1;

struct Checkpoint {
    std::string kind;
    std::string arch_json;
    std::vector<Tensor> tensors;
};

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ck);
Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes);
void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ck);
Checkpoint read_checkpoint(const std::filesystem::path& path);

/// Adam with bias correction; moments live alongside the parameters.
struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

void adam_step(TensorSet& params, const TensorSet& grads, TensorSet& m, TensorSet& v, std::uint64_t step,
               const AdamConfig& cfg);

/// Scales grads in place so their global L2 norm is at most max_norm; returns
/// the norm before clipping.
double clip_grad_norm(TensorSet& grads, double max_norm);

} // namespace stuttergate
