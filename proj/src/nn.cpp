#include "cumix/nn.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include "cumix/serialize.hpp"

namespace cumix::nn {

namespace {

constexpr double kBnMomentum = 0.1;

int64_t resolved_in(const NetworkSpec& spec, size_t i) {
    if (spec.blocks[i].in_channels > 0) return spec.blocks[i].in_channels;
    return i == 0 ? spec.in_channels : spec.blocks[i - 1].out_channels;
}

}  // namespace

void NetworkSpec::validate() const {
    if (num_classes < 2) throw ConfigError("network: num_classes must be >= 2");
    if (in_channels < 1) throw ConfigError("network: in_channels must be >= 1");
    if (blocks.size() < 2)
        throw ConfigError("network: at least 2 blocks required so a mix point exists inside the "
                          "network, got " + std::to_string(blocks.size()));
    int64_t chain = in_channels;
    for (size_t i = 0; i < blocks.size(); ++i) {
        const auto& b = blocks[i];
        if (b.out_channels < 1)
            throw ConfigError("network: block " + std::to_string(i) + " has no output channels");
        if (b.in_channels > 0 && b.in_channels != chain)
            throw ConfigError("network: inconsistent channel chain at block " + std::to_string(i) +
                              ": declared " + std::to_string(b.in_channels) + ", chain gives " +
                              std::to_string(chain));
        if (b.kernel < 1 || b.stride < 1 || b.pad < 0 || b.pool < 1)
            throw ConfigError("network: invalid geometry in block " + std::to_string(i));
        chain = b.out_channels;
    }
}

std::string NetworkSpec::canonical() const {
    std::ostringstream os;
    os << "cumix-net-v1\n";
    os << "name " << (name.empty() ? "custom" : name) << "\n";
    os << "in_channels " << in_channels << "\n";
    os << "num_classes " << num_classes << "\n";
    os << "blocks " << blocks.size() << "\n";
    for (const auto& b : blocks) {
        os << "block out=" << b.out_channels << " in=" << b.in_channels << " k=" << b.kernel
           << " s=" << b.stride << " p=" << b.pad << " norm=" << (b.norm ? 1 : 0)
           << " act=" << (b.act ? 1 : 0) << " res=" << (b.residual ? 1 : 0) << " pool=" << b.pool
           << "\n";
    }
    return os.str();
}

NetworkSpec NetworkSpec::parse(const std::string& text) {
    std::istringstream is(text);
    std::string line;
    if (!std::getline(is, line) || line != "cumix-net-v1")
        throw IoError("network spec: unknown format line '" + line + "'");
    NetworkSpec spec;
    size_t expect_blocks = 0;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        std::istringstream ls(line);
        std::string key;
        ls >> key;
        if (key == "name") ls >> spec.name;
        else if (key == "in_channels") ls >> spec.in_channels;
        else if (key == "num_classes") ls >> spec.num_classes;
        else if (key == "blocks") ls >> expect_blocks;
        else if (key == "block") {
            BlockSpec b;
            std::string field;
            while (ls >> field) {
                const auto eq = field.find('=');
                if (eq == std::string::npos) throw IoError("network spec: bad field " + field);
                const std::string k = field.substr(0, eq);
                const int64_t v = std::stoll(field.substr(eq + 1));
                if (k == "out") b.out_channels = v;
                else if (k == "in") b.in_channels = v;
                else if (k == "k") b.kernel = v;
                else if (k == "s") b.stride = v;
                else if (k == "p") b.pad = v;
                else if (k == "norm") b.norm = v != 0;
                else if (k == "act") b.act = v != 0;
                else if (k == "res") b.residual = v != 0;
                else if (k == "pool") b.pool = v;
                else throw IoError("network spec: unknown field " + k);
            }
            spec.blocks.push_back(b);
        } else {
            throw IoError("network spec: unknown key " + key);
        }
    }
    if (spec.blocks.size() != expect_blocks)
        throw IoError("network spec: block count mismatch");
    spec.validate();
    return spec;
}

NetworkSpec NetworkSpec::tiny4(int64_t num_classes) {
    NetworkSpec spec;
    spec.name = "tiny-4";
    spec.in_channels = 3;
    spec.num_classes = num_classes;
    for (const int64_t ch : {16, 32, 64, 128, 128}) {
        BlockSpec b;
        b.out_channels = ch;
        b.kernel = 3;
        b.stride = 1;
        b.pad = 1;
        b.norm = true;
        b.act = true;
        b.pool = 2;
        spec.blocks.push_back(b);
    }
    return spec;
}

uint64_t spec_hash(const NetworkSpec& spec) { return fnv1a(spec.canonical()); }

// ---------------------------------------------------------------------------
// Build
// ---------------------------------------------------------------------------

namespace {

template <typename T>
Tensor<T> kaiming(Shape shape, int64_t fan_in, Rng& rng) {
    Tensor<T> t(std::move(shape));
    const double std_dev = std::sqrt(2.0 / static_cast<double>(fan_in));
    for (auto& v : t.mutable_data()) v = static_cast<T>(rng.normal() * std_dev);
    return t;
}

}  // namespace

template <typename T>
Network<T> build(const NetworkSpec& spec, uint64_t init_seed) {
    spec.validate();
    Rng rng = Rng(init_seed).split(0x696e6974);
    Network<T> net;
    net.spec = spec;
    for (size_t i = 0; i < spec.blocks.size(); ++i) {
        const auto& bs = spec.blocks[i];
        const int64_t cin = resolved_in(spec, i);
        Block<T> blk;
        blk.conv.w = kaiming<T>({bs.out_channels, cin, bs.kernel, bs.kernel},
                                cin * bs.kernel * bs.kernel, rng);
        blk.conv.b = Tensor<T>({bs.out_channels});
        if (bs.residual && (cin != bs.out_channels || bs.stride != 1)) {
            ConvParams<T> proj;
            proj.w = kaiming<T>({bs.out_channels, cin, 1, 1}, cin, rng);
            blk.proj = std::move(proj);
        }
        if (bs.norm) {
            BnParams<T> bn;
            bn.gamma = Tensor<T>::full({bs.out_channels}, T(1));
            bn.beta = Tensor<T>({bs.out_channels});
            bn.state = BnState<T>(bs.out_channels);
            blk.bn = std::move(bn);
        }
        net.blocks.push_back(std::move(blk));
    }
    const int64_t d = net.latent_dim();
    net.fc_w = kaiming<T>({d, spec.num_classes}, d, rng);
    net.fc_b = Tensor<T>({spec.num_classes});
    return net;
}

template <typename T>
std::vector<ParamRef<T>> Network<T>::params() {
    std::vector<ParamRef<T>> out;
    for (size_t i = 0; i < blocks.size(); ++i) {
        const std::string prefix = "block" + std::to_string(i);
        auto& blk = blocks[i];
        out.push_back({prefix + ".conv.w", &blk.conv.w, blk.conv.w.dim(0)});
        out.push_back({prefix + ".conv.b", &blk.conv.b, 1});
        if (blk.proj) out.push_back({prefix + ".proj.w", &blk.proj->w, blk.proj->w.dim(0)});
        if (blk.bn) {
            out.push_back({prefix + ".bn.gamma", &blk.bn->gamma, 1});
            out.push_back({prefix + ".bn.beta", &blk.bn->beta, 1});
        }
    }
    out.push_back({"fc.w", &fc_w, 1});
    out.push_back({"fc.b", &fc_b, 1});
    return out;
}

template <typename T>
int64_t Network<T>::param_count() const {
    int64_t n = 0;
    auto& self = const_cast<Network<T>&>(*this);
    for (const auto& p : self.params()) n += p.tensor->numel();
    return n;
}

template <typename T>
Shape Network<T>::boundary_shape(int64_t k, int64_t batch, int64_t h, int64_t w) const {
    if (k < 0 || k > num_blocks())
        throw ConfigError("boundary_shape: k=" + std::to_string(k) + " outside 0.." +
                          std::to_string(num_blocks()));
    int64_t c = spec.in_channels, hh = h, ww = w;
    for (int64_t i = 0; i < k; ++i) {
        const auto& bs = spec.blocks[static_cast<size_t>(i)];
        hh = (hh + 2 * bs.pad - bs.kernel) / bs.stride + 1;
        ww = (ww + 2 * bs.pad - bs.kernel) / bs.stride + 1;
        if (bs.pool > 1) {
            hh = (hh - bs.pool) / bs.pool + 1;
            ww = (ww - bs.pool) / bs.pool + 1;
        }
        c = bs.out_channels;
    }
    return {batch, c, hh, ww};
}

// ---------------------------------------------------------------------------
// Pass
// ---------------------------------------------------------------------------

template <typename T>
Pass<T>::Pass(Network<T>& net, Tape<T>* tape, bool training, bool update_stats,
              bool params_require_grad)
    : net_(net), tape_(tape), training_(training), update_stats_(update_stats) {
    for (const auto& ref : net_.params()) {
        param_ptrs_.push_back(ref.tensor);
        leaves_.push_back(tape_ ? tape_->leaf(*ref.tensor, params_require_grad)
                                : ref.tensor->detached());
    }
}

template <typename T>
const Tensor<T>& Pass<T>::leaf_for(const Tensor<T>* p) const {
    for (size_t i = 0; i < param_ptrs_.size(); ++i)
        if (param_ptrs_[i] == p) return leaves_[i];
    throw std::logic_error("pass: unknown parameter");
}

template <typename T>
Tensor<T> Pass<T>::run_block(const Tensor<T>& x, int64_t i) {
    auto& blk = net_.blocks[static_cast<size_t>(i)];
    const auto& bs = net_.spec.blocks[static_cast<size_t>(i)];
    Tensor<T> y = conv2d(x, leaf_for(&blk.conv.w), leaf_for(&blk.conv.b), bs.stride, bs.pad);
    if (blk.bn)
        y = batchnorm2d(y, leaf_for(&blk.bn->gamma), leaf_for(&blk.bn->beta), blk.bn->state,
                        static_cast<T>(kBnMomentum), training_, update_stats_);
    if (bs.residual) {
        Tensor<T> r = blk.proj ? conv2d(x, leaf_for(&blk.proj->w), Tensor<T>(), bs.stride, 0) : x;
        y = add(y, r);
    }
    if (bs.act) y = relu(y);
    if (bs.pool > 1) y = pool2d(y, PoolKind::Max, bs.pool, bs.pool, bs.pool);
    return y;
}

template <typename T>
FeatureMap<T> Pass<T>::forward_to(const Tensor<T>& x, int64_t k) {
    if (k < 0 || k > net_.num_blocks())
        throw ConfigError("forward_to: boundary k=" + std::to_string(k) + " outside 0.." +
                          std::to_string(net_.num_blocks()));
    Tensor<T> h = x;
    for (int64_t i = 0; i < k; ++i) h = run_block(h, i);
    return {std::move(h), k};
}

template <typename T>
Tensor<T> Pass<T>::forward_from(const FeatureMap<T>& fm) {
    const int64_t k = fm.k;
    if (k < 0 || k > net_.num_blocks())
        throw ConfigError("forward_from: boundary k=" + std::to_string(k) + " outside 0.." +
                          std::to_string(net_.num_blocks()));
    const int64_t expect_c =
        k == 0 ? net_.spec.in_channels : net_.spec.blocks[static_cast<size_t>(k - 1)].out_channels;
    if (fm.values.rank() != 4 || fm.values.dim(1) != expect_c)
        throw ShapeError("forward_from: feature map " + shape_str(fm.values.shape()) +
                         " does not match boundary " + std::to_string(k) + " (expected " +
                         std::to_string(expect_c) + " channels)");
    Tensor<T> h = fm.values;
    for (int64_t i = k; i < net_.num_blocks(); ++i) h = run_block(h, i);
    h = pool2d(h, PoolKind::Avg, h.dim(2), h.dim(3), 1);
    h = reshape(h, {h.dim(0), h.dim(1)});
    return linear(h, leaf_for(&net_.fc_w), leaf_for(&net_.fc_b));
}

template <typename T>
Tensor<T> Pass<T>::forward(const Tensor<T>& x) {
    return forward_from(forward_to(x, 0));
}

template <typename T>
Tensor<T> Pass<T>::latent(const Tensor<T>& x) {
    Tensor<T> h = forward_to(x, net_.num_blocks()).values;
    h = pool2d(h, PoolKind::Avg, h.dim(2), h.dim(3), 1);
    return reshape(h, {h.dim(0), h.dim(1)});
}

template <typename T>
Tensor<T> Pass<T>::head(const Tensor<T>& latent) {
    return linear(latent, leaf_for(&net_.fc_w), leaf_for(&net_.fc_b));
}

template <typename T>
Tensor<T> eval_logits(Network<T>& net, const Tensor<T>& x) {
    Pass<T> pass(net, nullptr, false, false, false);
    return pass.forward(x);
}

template <typename T>
Tensor<T> eval_latent(Network<T>& net, const Tensor<T>& x) {
    Pass<T> pass(net, nullptr, false, false, false);
    return pass.latent(x);
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

namespace {

constexpr char kCkptMagic[] = "CUMCKPT1";

template <typename T>
std::vector<std::pair<std::string, Tensor<T>*>> named_state(Network<T>& net) {
    std::vector<std::pair<std::string, Tensor<T>*>> out;
    for (const auto& p : net.params()) out.emplace_back(p.name, p.tensor);
    return out;
}

std::string hash_hex(uint64_t h) {
    char hex[24];
    std::snprintf(hex, sizeof(hex), "%016llx", static_cast<unsigned long long>(h));
    return hex;
}

}  // namespace

template <typename T>
void save_checkpoint(const std::string& path, Network<T>& net) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open for write: " + path);
    const std::string spec_text = net.spec.canonical();
    os << kCkptMagic << "\n";
    os << "hash " << hash_hex(fnv1a(spec_text)) << "\n";
    os << "spec_chars " << spec_text.size() << "\n";
    os << spec_text;
    auto entries = named_state(net);
    size_t count = entries.size();
    for (size_t i = 0; i < net.blocks.size(); ++i)
        if (net.blocks[i].bn) count += 2;
    os << "tensors " << count << "\n";
    for (const auto& [name, tensor] : entries) {
        os << name << "\n";
        io::save_tensor(os, *tensor);
    }
    for (size_t i = 0; i < net.blocks.size(); ++i) {
        if (!net.blocks[i].bn) continue;
        auto& bn = *net.blocks[i].bn;
        const int64_t c = bn.gamma.numel();
        os << "block" << i << ".bn.rmean\n";
        io::save_tensor(os, Tensor<T>({c}, std::vector<T>(bn.state.running_mean)));
        os << "block" << i << ".bn.rvar\n";
        io::save_tensor(os, Tensor<T>({c}, std::vector<T>(bn.state.running_var)));
    }
    if (!os) throw IoError("checkpoint: write failed: " + path);
}

template <typename T>
Network<T> load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw CheckpointError("cannot open: " + path);
    std::string line;
    if (!std::getline(is, line) || line != kCkptMagic)
        throw CheckpointError("checkpoint: bad magic in " + path);
    if (!std::getline(is, line) || line.rfind("hash ", 0) != 0)
        throw CheckpointError("checkpoint: missing hash in " + path);
    const std::string stored_hash = line.substr(5);
    if (!std::getline(is, line) || line.rfind("spec_chars ", 0) != 0)
        throw CheckpointError("checkpoint: missing spec in " + path);
    const auto spec_len = static_cast<size_t>(std::stoull(line.substr(11)));
    if (spec_len > 1 << 20) throw CheckpointError("checkpoint: unreasonable spec size in " + path);
    std::string spec_text(spec_len, '\0');
    is.read(spec_text.data(), static_cast<std::streamsize>(spec_len));
    if (!is) throw CheckpointError("checkpoint: truncated spec in " + path);
    if (stored_hash != hash_hex(fnv1a(spec_text)))
        throw CheckpointError("checkpoint: spec hash mismatch in " + path + " (stored " + stored_hash +
                      ", computed " + hash_hex(fnv1a(spec_text)) + ")");
    NetworkSpec spec = NetworkSpec::parse(spec_text);
    Network<T> net = build<T>(spec, 0);
    if (!std::getline(is, line) || line.rfind("tensors ", 0) != 0)
        throw CheckpointError("checkpoint: missing tensor count in " + path);
    const auto count = static_cast<size_t>(std::stoull(line.substr(8)));

    std::map<std::string, Tensor<T>*> by_name;
    for (auto& [name, tensor] : named_state(net)) by_name[name] = tensor;
    std::map<std::string, std::vector<T>*> stats;
    for (size_t i = 0; i < net.blocks.size(); ++i) {
        if (!net.blocks[i].bn) continue;
        stats["block" + std::to_string(i) + ".bn.rmean"] = &net.blocks[i].bn->state.running_mean;
        stats["block" + std::to_string(i) + ".bn.rvar"] = &net.blocks[i].bn->state.running_var;
    }
    size_t loaded = 0;
    for (size_t i = 0; i < count; ++i) {
        if (!std::getline(is, line)) throw CheckpointError("checkpoint: truncated tensor list in " + path);
        Tensor<T> t;
        try {
            t = io::load_tensor<T>(is);
        } catch (const IoError& e) {
            throw CheckpointError("checkpoint: " + std::string(e.what()) + " in " + path);
        }
        if (auto it = by_name.find(line); it != by_name.end()) {
            if (t.shape() != it->second->shape())
                throw CheckpointError("checkpoint: tensor " + line + " has shape " + shape_str(t.shape()) +
                              ", expected " + shape_str(it->second->shape()));
            *it->second = t;
            ++loaded;
        } else if (auto st = stats.find(line); st != stats.end()) {
            st->second->assign(t.data().begin(), t.data().end());
            ++loaded;
        } else {
            throw CheckpointError("checkpoint: unexpected tensor " + line + " in " + path);
        }
    }
    if (loaded != by_name.size() + stats.size())
        throw CheckpointError("checkpoint: incomplete state in " + path);
    return net;
}

// ---------------------------------------------------------------------------
// Instantiations
// ---------------------------------------------------------------------------

template class Network<float>;
template class Network<double>;
template class Pass<float>;
template class Pass<double>;

#define CUMIX_INSTANTIATE_NN(T)                                             \
    template Network<T> build<T>(const NetworkSpec&, uint64_t);             \
    template Tensor<T> eval_logits<T>(Network<T>&, const Tensor<T>&);       \
    template Tensor<T> eval_latent<T>(Network<T>&, const Tensor<T>&);       \
    template void save_checkpoint<T>(const std::string&, Network<T>&);      \
    template Network<T> load_checkpoint<T>(const std::string&);

CUMIX_INSTANTIATE_NN(float)
CUMIX_INSTANTIATE_NN(double)

#undef CUMIX_INSTANTIATE_NN

}  // namespace cumix::nn
