#include "dctts/params.hpp"

#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>

namespace dctts {

Parameter& ParamStore::create(const std::string& name, std::vector<int> dims, Init init, SeqRng& rng) {
    if (name.rfind("opt/", 0) == 0) throw UsageError("parameter name uses reserved prefix: " + name);
    if (by_name_.count(name)) throw UsageError("duplicate parameter name: " + name);
    Tensor value(dims);
    switch (init) {
        case Init::Zeros:
            break;
        case Init::Ones:
            std::fill(value.data.begin(), value.data.end(), 1.0);
            break;
        case Init::FanInUniform: {
            // fan_in = product of all dims but the first (rows are output units)
            int64_t fan_in = 1;
            for (size_t i = 1; i < value.dims.size(); ++i) fan_in *= value.dims[i];
            if (fan_in < 1) fan_in = 1;
            const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
            for (double& x : value.data) x = rng.uniform(-bound, bound);
            break;
        }
        case Init::Normal002:
            for (double& x : value.data) x = rng.normal(0.0, 0.02);
            break;
    }
    auto p = std::make_unique<Parameter>(name, std::move(value));
    Parameter* raw = p.get();
    by_name_[name] = std::move(p);
    order_.push_back(raw);
    return *raw;
}

Parameter& ParamStore::get(const std::string& name) {
    auto it = by_name_.find(name);
    if (it == by_name_.end()) throw UsageError("unknown parameter: " + name);
    return *it->second;
}

const Parameter& ParamStore::get(const std::string& name) const {
    auto it = by_name_.find(name);
    if (it == by_name_.end()) throw UsageError("unknown parameter: " + name);
    return *it->second;
}

int64_t ParamStore::parameter_count() const {
    int64_t n = 0;
    for (const Parameter* p : order_) n += p->numel();
    return n;
}

void ParamStore::zero_grads() {
    for (Parameter* p : order_) std::fill(p->grad.data.begin(), p->grad.data.end(), 0.0);
}

bool ParamStore::grads_finite(std::string* offender) const {
    for (const Parameter* p : order_)
        if (!p->grad.all_finite()) {
            if (offender) *offender = p->name;
            return false;
        }
    return true;
}

uint64_t ParamStore::value_checksum() const {
    // FNV-1a over the raw bytes of every parameter in creation order
    uint64_t h = 1469598103934665603ULL;
    for (const Parameter* p : order_) {
        for (char c : p->name) {
            h ^= static_cast<unsigned char>(c);
            h *= 1099511628211ULL;
        }
        for (double v : p->value.data) {
            uint64_t bits;
            std::memcpy(&bits, &v, sizeof bits);
            for (int i = 0; i < 8; ++i) {
                h ^= (bits >> (8 * i)) & 0xff;
                h *= 1099511628211ULL;
            }
        }
    }
    return h;
}

void Adam::step(const std::vector<ParamStore*>& stores) {
    ++step_count_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_count_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_count_));
    for (ParamStore* store : stores) {
        for (Parameter* p : store->ordered()) {
            if (!p->grad.all_finite()) throw NumericError("NaN gradient in parameter " + p->name);
            Tensor& m = m_.try_emplace(p->name, Tensor::zeros(p->value.dims)).first->second;
            Tensor& v = v_.try_emplace(p->name, Tensor::zeros(p->value.dims)).first->second;
            for (int64_t i = 0; i < p->numel(); ++i) {
                const double g = p->grad.data[i];
                m.data[i] = cfg_.beta1 * m.data[i] + (1.0 - cfg_.beta1) * g;
                v.data[i] = cfg_.beta2 * v.data[i] + (1.0 - cfg_.beta2) * g * g;
                const double mhat = m.data[i] / bc1;
                const double vhat = v.data[i] / bc2;
                p->value.data[i] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
            }
        }
    }
}

void Adam::zero_grads(const std::vector<ParamStore*>& stores) {
    for (ParamStore* s : stores) s->zero_grads();
}

std::vector<std::pair<std::string, Tensor>> Adam::state_tensors() const {
    std::vector<std::pair<std::string, Tensor>> out;
    out.emplace_back("opt/step", Tensor::scalar(static_cast<double>(step_count_)));
    for (const auto& [name, t] : m_) out.emplace_back("opt/m/" + name, t);
    for (const auto& [name, t] : v_) out.emplace_back("opt/v/" + name, t);
    return out;
}

void Adam::load_state(const std::vector<std::pair<std::string, Tensor>>& tensors) {
    m_.clear();
    v_.clear();
    step_count_ = 0;
    for (const auto& [name, t] : tensors) {
        if (name == "opt/step")
            step_count_ = static_cast<int64_t>(t.data[0]);
        else if (name.rfind("opt/m/", 0) == 0)
            m_[name.substr(6)] = t;
        else if (name.rfind("opt/v/", 0) == 0)
            v_[name.substr(6)] = t;
    }
}

namespace checkpoint {

namespace {

constexpr uint16_t kVersion = 1;

void put_u16(std::ofstream& out, uint16_t v) {
    unsigned char b[2] = {static_cast<unsigned char>(v & 0xff), static_cast<unsigned char>(v >> 8)};
    out.write(reinterpret_cast<char*>(b), 2);
}
void put_u32(std::ofstream& out, uint32_t v) {
    unsigned char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
    out.write(reinterpret_cast<char*>(b), 4);
}
uint16_t get_u16(std::ifstream& in) {
    unsigned char b[2];
    in.read(reinterpret_cast<char*>(b), 2);
    return static_cast<uint16_t>(b[0] | (b[1] << 8));
}
uint32_t get_u32(std::ifstream& in) {
    unsigned char b[4];
    in.read(reinterpret_cast<char*>(b), 4);
    return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
           (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
}

}  // namespace

void save(const std::string& path, const std::vector<std::pair<std::string, Tensor>>& tensors) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ConfigError("cannot write checkpoint: " + path);
    out.write("DCKP", 4);
    put_u16(out, kVersion);
    put_u32(out, static_cast<uint32_t>(tensors.size()));
    for (const auto& [name, t] : tensors) {
        put_u16(out, static_cast<uint16_t>(name.size()));
        out.write(name.data(), static_cast<std::streamsize>(name.size()));
        out.put(static_cast<char>(t.rank()));
        for (int d : t.dims) put_u32(out, static_cast<uint32_t>(d));
        // float64 little-endian payload; this code assumes an LE host
        out.write(reinterpret_cast<const char*>(t.data.data()),
                  static_cast<std::streamsize>(t.data.size() * sizeof(double)));
    }
    if (!out) throw ConfigError("short write to checkpoint: " + path);
}

std::vector<std::pair<std::string, Tensor>> load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot open checkpoint: " + path);
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, "DCKP", 4) != 0) throw ConfigError("bad checkpoint magic in " + path);
    const uint16_t version = get_u16(in);
    if (version != kVersion) throw ConfigError("unsupported checkpoint version " + std::to_string(version));
    const uint32_t count = get_u32(in);
    std::vector<std::pair<std::string, Tensor>> out;
    out.reserve(count);
    for (uint32_t i = 0; i < count; ++i) {
        const uint16_t nlen = get_u16(in);
        std::string name(nlen, '\0');
        in.read(name.data(), nlen);
        const int rank = in.get();
        std::vector<int> dims(static_cast<size_t>(rank));
        for (int r = 0; r < rank; ++r) dims[static_cast<size_t>(r)] = static_cast<int>(get_u32(in));
        Tensor t(dims);
        in.read(reinterpret_cast<char*>(t.data.data()),
                static_cast<std::streamsize>(t.data.size() * sizeof(double)));
        if (!in) throw ConfigError("truncated checkpoint: " + path);
        out.emplace_back(std::move(name), std::move(t));
    }
    return out;
}

std::vector<std::pair<std::string, Tensor>> collect(
    const std::vector<std::pair<std::string, const ParamStore*>>& stores, const Adam* adam) {
    std::vector<std::pair<std::string, Tensor>> out;
    for (const auto& [prefix, store] : stores)
        for (const Parameter* p : store->ordered())
            out.emplace_back(prefix.empty() ? p->name : prefix + "/" + p->name, p->value);
    if (adam) {
        auto opt = adam->state_tensors();
        out.insert(out.end(), opt.begin(), opt.end());
    }
    return out;
}

void restore(const std::vector<std::pair<std::string, Tensor>>& tensors,
             const std::vector<std::pair<std::string, ParamStore*>>& stores, Adam* adam) {
    std::map<std::string, const Tensor*> by_name;
    std::vector<std::pair<std::string, Tensor>> opt;
    for (const auto& [name, t] : tensors) {
        if (name.rfind("opt/", 0) == 0)
            opt.emplace_back(name, t);
        else
            by_name[name] = &t;
    }
    for (const auto& [prefix, store] : stores) {
        for (Parameter* p : store->ordered()) {
            const std::string full = prefix.empty() ? p->name : prefix + "/" + p->name;
            auto it = by_name.find(full);
            if (it == by_name.end()) throw ConfigError("checkpoint missing parameter " + full);
            if (it->second->dims != p->value.dims)
                throw ConfigError("checkpoint shape mismatch for " + full + ": " + it->second->shape_str() +
                                  " vs " + p->value.shape_str());
            p->value = *it->second;
        }
    }
    if (adam) {
        // optimizer moment names carry the same prefixes used at save time
        adam->load_state(opt);
    }
}

}  // namespace checkpoint

}  // namespace dctts
