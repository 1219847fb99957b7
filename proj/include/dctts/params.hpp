#pragma once

#include <map>
#include <memory>
#include <string>
#include <vector>

#include "dctts/common.hpp"
#include "dctts/graph.hpp"

namespace dctts {

enum class Init { Zeros, FanInUniform, Normal002, Ones };

// Owns a model's parameters. Creation order is the deterministic init order;
// names must be unique. The "opt/" prefix is reserved for optimizer state in
// checkpoints and rejected here.
class ParamStore {
public:
    Parameter& create(const std::string& name, std::vector<int> dims, Init init, SeqRng& rng);
    Parameter& get(const std::string& name);
    const Parameter& get(const std::string& name) const;
    bool has(const std::string& name) const { return by_name_.count(name) != 0; }

    const std::vector<Parameter*>& ordered() const { return order_; }
    int64_t parameter_count() const;
    void zero_grads();
    bool grads_finite(std::string* offender = nullptr) const;
    uint64_t value_checksum() const;

private:
    std::map<std::string, std::unique_ptr<Parameter>> by_name_;
    std::vector<Parameter*> order_;
};

struct AdamConfig {
    double lr = 2e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

// Standard Adam with bias correction. Moments are keyed by parameter name so
// state survives checkpoint round trips.
class Adam {
public:
    explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) {}

    void step(const std::vector<ParamStore*>& stores);
    void zero_grads(const std::vector<ParamStore*>& stores);

    int64_t step_count() const { return step_count_; }
    const AdamConfig& config() const { return cfg_; }
    double& lr() { return cfg_.lr; }

    // checkpoint plumbing
    std::vector<std::pair<std::string, Tensor>> state_tensors() const;
    void load_state(const std::vector<std::pair<std::string, Tensor>>& tensors);

private:
    AdamConfig cfg_;
    int64_t step_count_ = 0;
    std::map<std::string, Tensor> m_;
    std::map<std::string, Tensor> v_;
};

// Checkpoint container: magic "DCKP", version u16, count u32, then per-tensor
// records (name len u16, name, rank u8, dims u32 LE, float64 LE payload).
namespace checkpoint {

void save(const std::string& path, const std::vector<std::pair<std::string, Tensor>>& tensors);
std::vector<std::pair<std::string, Tensor>> load(const std::string& path);

// store helpers: model params under `prefix/name`, optimizer under `opt/...`
std::vector<std::pair<std::string, Tensor>> collect(const std::vector<std::pair<std::string, const ParamStore*>>& stores,
                                                    const Adam* adam);
void restore(const std::vector<std::pair<std::string, Tensor>>& tensors,
             const std::vector<std::pair<std::string, ParamStore*>>& stores, Adam* adam);

}  // namespace checkpoint

}  // namespace dctts
