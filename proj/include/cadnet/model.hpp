#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <memory>
#include <nlohmann/json.hpp>
#include <string>
#include <type_traits>
#include <vector>

#include "cadnet/error.hpp"
#include "cadnet/graph.hpp"
#include "cadnet/grid.hpp"
#include "cadnet/optimizer.hpp"
#include "cadnet/rng.hpp"

namespace cadnet {

/// Switches that remove parts of the architecture. Disabled context branches
/// contribute no parameters, so every downstream width shrinks with them.
struct AblationFlags {
  bool use_gps = true;
  bool use_time = true;
  bool use_frame = true;
  bool skip_main = true;     // input grid concatenated before the output conv
  bool skip_context = true;  // context concatenated onto the latent code
  bool deterministic = false;  // plain autoencoder: no sampling, no KL term

  bool any_context() const { return use_gps || use_time || use_frame; }

  friend bool operator==(const AblationFlags&, const AblationFlags&) = default;
};

/// Named variants matching the rows of the ablation table.
inline const std::vector<std::string>& variant_names() {
  static const std::vector<std::string> names{
      "cadnet",  "autoencoder", "wo-gps-time", "wo-time",  "wo-gps",
      "wo-frame", "wo-skip",    "wo-skip-m",   "wo-skip-c"};
  return names;
}

inline AblationFlags ablation_from_name(const std::string& name) {
  AblationFlags f;
  if (name == "cadnet" || name == "full") return f;
  if (name == "autoencoder") {
    f.use_gps = f.use_time = f.use_frame = false;
    f.deterministic = true;
    return f;
  }
  if (name == "wo-gps-time") { f.use_gps = f.use_time = false; return f; }
  if (name == "wo-time") { f.use_time = false; return f; }
  if (name == "wo-gps") { f.use_gps = false; return f; }
  if (name == "wo-frame") { f.use_frame = false; return f; }
  if (name == "wo-skip") { f.skip_main = f.skip_context = false; return f; }
  if (name == "wo-skip-m") { f.skip_main = false; return f; }
  if (name == "wo-skip-c") { f.skip_context = false; return f; }
  throw config_error("unknown model variant: " + name);
}

struct ModelConfig {
  int grid_size = 13;   // S
  int class_count = 8;  // C
  int frame_dim = 256;  // width of the frame-appearance vector
  std::vector<int> conv_channels{16, 32};
  int conv_kernel = 3;
  int encoder_fc = 128;  // width of e
  int embed_width = 32;  // embedding width for time and GPS inputs
  int time_feat = 32;    // c_t
  int gps_feat = 32;     // c_l
  int frame_feat = 64;   // c_f
  int latent = 32;
  double kl_weight = 1.0;
  double clamp_eps = 1e-6;
  AblationFlags ablation;
  // GPS min-max normalization bounds, captured from the training scenario.
  double lat_min = 0.0, lat_max = 1.0, lon_min = 0.0, lon_max = 1.0;
  std::vector<std::string> classes;

  int context_width() const {
    int w = 0;
    if (ablation.use_time) w += time_feat;
    if (ablation.use_gps) w += gps_feat;
    if (ablation.use_frame) w += frame_feat;
    return w;
  }

  int h2_width() const { return grid_size * grid_size * class_count; }

  void validate() const {
    if (grid_size <= 0 || class_count <= 0 || frame_dim <= 0)
      throw config_error("model dimensions must be positive");
    if (conv_channels.empty()) throw config_error("at least one encoder conv layer is required");
    for (int ch : conv_channels)
      if (ch <= 0) throw config_error("conv channel counts must be positive");
    if (conv_kernel < 1 || conv_kernel % 2 == 0)
      throw config_error("conv kernel size must be odd and positive");
    if (encoder_fc <= 0 || latent <= 0) throw config_error("layer widths must be positive");
    if ((ablation.use_time || ablation.use_gps) && embed_width != 32)
      throw config_error("time/GPS embedding width is fixed at 32 when those inputs are enabled");
    if (time_feat <= 0 || gps_feat <= 0 || frame_feat <= 0)
      throw config_error("context feature widths must be positive");
    if (kl_weight < 0) throw config_error("kl_weight must be non-negative");
    if (!(clamp_eps > 0.0 && clamp_eps < 0.5))
      throw config_error("clamp_eps must lie in (0, 0.5)");
    if (!(lat_max >= lat_min) || !(lon_max >= lon_min))
      throw config_error("GPS bounds are inverted");
    if (!classes.empty() && static_cast<int>(classes.size()) != class_count)
      throw config_error("class vocabulary size does not match class_count");
  }
};

inline void to_json(nlohmann::json& j, const AblationFlags& f) {
  j = nlohmann::json{{"use_gps", f.use_gps},       {"use_time", f.use_time},
                     {"use_frame", f.use_frame},   {"skip_main", f.skip_main},
                     {"skip_context", f.skip_context}, {"deterministic", f.deterministic}};
}

inline void from_json(const nlohmann::json& j, AblationFlags& f) {
  f.use_gps = j.value("use_gps", true);
  f.use_time = j.value("use_time", true);
  f.use_frame = j.value("use_frame", true);
  f.skip_main = j.value("skip_main", true);
  f.skip_context = j.value("skip_context", true);
  f.deterministic = j.value("deterministic", false);
}

inline void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = nlohmann::json{{"grid_size", c.grid_size},
                     {"class_count", c.class_count},
                     {"frame_dim", c.frame_dim},
                     {"conv_channels", c.conv_channels},
                     {"conv_kernel", c.conv_kernel},
                     {"encoder_fc", c.encoder_fc},
                     {"embed_width", c.embed_width},
                     {"time_feat", c.time_feat},
                     {"gps_feat", c.gps_feat},
                     {"frame_feat", c.frame_feat},
                     {"latent", c.latent},
                     {"kl_weight", c.kl_weight},
                     {"clamp_eps", c.clamp_eps},
                     {"ablation", c.ablation},
                     {"lat_min", c.lat_min},
                     {"lat_max", c.lat_max},
                     {"lon_min", c.lon_min},
                     {"lon_max", c.lon_max},
                     {"classes", c.classes}};
}

inline void from_json(const nlohmann::json& j, ModelConfig& c) {
  ModelConfig defaults;
  c.grid_size = j.value("grid_size", defaults.grid_size);
  c.class_count = j.value("class_count", defaults.class_count);
  c.frame_dim = j.value("frame_dim", defaults.frame_dim);
  c.conv_channels = j.value("conv_channels", defaults.conv_channels);
  c.conv_kernel = j.value("conv_kernel", defaults.conv_kernel);
  c.encoder_fc = j.value("encoder_fc", defaults.encoder_fc);
  c.embed_width = j.value("embed_width", defaults.embed_width);
  c.time_feat = j.value("time_feat", defaults.time_feat);
  c.gps_feat = j.value("gps_feat", defaults.gps_feat);
  c.frame_feat = j.value("frame_feat", defaults.frame_feat);
  c.latent = j.value("latent", defaults.latent);
  c.kl_weight = j.value("kl_weight", defaults.kl_weight);
  c.clamp_eps = j.value("clamp_eps", defaults.clamp_eps);
  c.ablation = j.value("ablation", defaults.ablation);
  c.lat_min = j.value("lat_min", defaults.lat_min);
  c.lat_max = j.value("lat_max", defaults.lat_max);
  c.lon_min = j.value("lon_min", defaults.lon_min);
  c.lon_max = j.value("lon_max", defaults.lon_max);
  c.classes = j.value("classes", defaults.classes);
}

/// Closed-form KL divergence between N(mu, diag(exp(logvar))) and N(0, I).
inline double kl_standard_normal(const std::vector<double>& mu,
                                 const std::vector<double>& logvar) {
  if (mu.size() != logvar.size()) throw config_error("kl: mu/logvar length mismatch");
  double total = 0;
  for (std::size_t i = 0; i < mu.size(); ++i)
    total += 0.5 * (mu[i] * mu[i] + std::exp(logvar[i]) - 1.0 - logvar[i]);
  return total;
}

/// Monte Carlo estimate of the same divergence: draws z ~ N(mu, sigma) and
/// averages log q(z) - log p(z). Used as an independent oracle for the
/// closed form, not in any production path.
inline double kl_monte_carlo(const std::vector<double>& mu, const std::vector<double>& logvar,
                             std::int64_t draws, std::uint64_t seed) {
  if (mu.size() != logvar.size()) throw config_error("kl: mu/logvar length mismatch");
  if (draws <= 0) throw usage_error("kl_monte_carlo: draws must be positive");
  Rng rng(seed);
  double total = 0;
  for (std::int64_t d = 0; d < draws; ++d) {
    double term = 0;
    for (std::size_t i = 0; i < mu.size(); ++i) {
      const double sigma = std::exp(0.5 * logvar[i]);
      const double z = mu[i] + sigma * rng.normal();
      const double u = (z - mu[i]) / sigma;
      // log q - log p; the 2*pi constants cancel.
      term += 0.5 * z * z - 0.5 * u * u - 0.5 * logvar[i];
    }
    total += term;
  }
  return total / static_cast<double>(draws);
}

/// Inputs for one forward pass, already normalized for the network.
template <typename T>
struct ModelBatch {
  Tensor<T> x;      // (N, S, S, C)
  Tensor<T> time2;  // (N, 2) cyclic encoding
  Tensor<T> gps2;   // (N, 2) min-max normalized
  Tensor<T> frame;  // (N, F)
  int batch() const { return x.extent(0); }
};

/// Variables of interest after a forward pass.
template <typename T>
struct ForwardVars {
  typename Graph<T>::Var x;
  typename Graph<T>::Var mu;
  typename Graph<T>::Var logvar;  // invalid in deterministic mode
  typename Graph<T>::Var xhat;
};

template <typename T>
struct LossVars {
  typename Graph<T>::Var bce;
  typename Graph<T>::Var kl;  // invalid in deterministic mode
  typename Graph<T>::Var total;
};

/// Conditional variational autoencoder over detection grids with a context
/// subnetwork for GPS, time of day, and frame appearance.
template <typename T = float>
class CadnetModel {
 public:
  explicit CadnetModel(ModelConfig config) : cfg_(std::move(config)) {
    cfg_.validate();
    build_slots();
  }

  const ModelConfig& config() const { return cfg_; }
  ParameterStore<T>& params() { return params_; }
  const ParameterStore<T>& params() const { return params_; }

  /// Fills every parameter from a per-tensor stream derived from `seed`, so
  /// shared layers get identical inits across ablation variants.
  void init_parameters(std::uint64_t seed) {
    for (auto& p : params_) {
      Rng rng(derive_seed(seed, p.name));
      const double scale = init_scale(p.name);
      if (scale == 0.0) {
        p.value.fill(T{0});
      } else {
        for (std::int64_t i = 0; i < p.value.numel(); ++i)
          p.value[i] = static_cast<T>(rng.normal() * scale);
      }
      p.cache.fill(T{0});
      p.grad.fill(T{0});
    }
  }

  /// Builds normalized network inputs from raw samples.
  ModelBatch<T> make_batch(const std::vector<const Sample*>& samples) const {
    if (samples.empty()) throw usage_error("make_batch: empty batch");
    const int n = static_cast<int>(samples.size());
    const int s = cfg_.grid_size, c = cfg_.class_count, f = cfg_.frame_dim;
    ModelBatch<T> batch{Tensor<T>({n, s, s, c}), Tensor<T>({n, 2}), Tensor<T>({n, 2}),
                        Tensor<T>({n, f})};
    for (int i = 0; i < n; ++i) {
      const Sample& sample = *samples[static_cast<std::size_t>(i)];
      if (sample.grid.size != s || sample.grid.class_count != c)
        throw data_error("sample grid is " + std::to_string(sample.grid.size) + "x" +
                         std::to_string(sample.grid.class_count) + " channels, model expects " +
                         std::to_string(s) + "x" + std::to_string(c));
      if (static_cast<int>(sample.context.frame_activation.size()) != f)
        throw data_error("sample frame activation width does not match the model");
      for (std::int64_t e = 0; e < sample.grid.scores.numel(); ++e)
        batch.x[static_cast<std::int64_t>(i) * s * s * c + e] =
            static_cast<T>(sample.grid.scores[e]);
      const double phase = 2.0 * 3.14159265358979323846 *
                           (sample.context.time_of_day / 86400.0);
      batch.time2(i, 0) = static_cast<T>(std::sin(phase));
      batch.time2(i, 1) = static_cast<T>(std::cos(phase));
      batch.gps2(i, 0) = static_cast<T>(normalize(sample.context.latitude, cfg_.lat_min, cfg_.lat_max));
      batch.gps2(i, 1) = static_cast<T>(normalize(sample.context.longitude, cfg_.lon_min, cfg_.lon_max));
      for (int e = 0; e < f; ++e)
        batch.frame(i, e) = static_cast<T>(sample.context.frame_activation[static_cast<std::size_t>(e)]);
    }
    return batch;
  }

  /// Forward pass. `eps` supplies the reparameterization noise; pass nullptr
  /// to evaluate at the posterior mean (z = mu), the deterministic setting
  /// used for validation, scoring, and inference.
  ForwardVars<T> forward(Graph<T>& g, const ModelBatch<T>& batch, const Tensor<T>* eps) const {
    using Var = typename Graph<T>::Var;
    const int n = batch.batch();
    const int s = cfg_.grid_size, c = cfg_.class_count;
    ForwardVars<T> out;
    out.x = g.input(batch.x);

    // Encoder: conv stack, flatten, FC.
    Var h = out.x;
    int channels = c;
    for (std::size_t layer = 0; layer < cfg_.conv_channels.size(); ++layer) {
      h = g.relu(g.conv2d(h, g.parameter(slot("enc.conv" + std::to_string(layer) + ".kernel")),
                          g.parameter(slot("enc.conv" + std::to_string(layer) + ".bias")), 1,
                          Padding::same));
      channels = cfg_.conv_channels[layer];
    }
    h = g.reshape(h, {n, s * s * channels});
    Var e = g.relu(g.fc(h, g.parameter(slot("enc.fc.w")), g.parameter(slot("enc.fc.b"))));

    // Context subnetwork: enabled branches only.
    Var ctx;
    bool have_ctx = false;
    auto add_branch = [&](const char* name, Var input) {
      Var b = branch_forward(g, name, input);
      ctx = have_ctx ? g.concat_last(ctx, b) : b;
      have_ctx = true;
    };
    if (cfg_.ablation.use_time) add_branch("time", g.input(batch.time2));
    if (cfg_.ablation.use_gps) add_branch("gps", g.input(batch.gps2));
    if (cfg_.ablation.use_frame) add_branch("frame", g.input(batch.frame));

    Var d = have_ctx ? g.concat_last(e, ctx) : e;
    out.mu = g.fc(d, g.parameter(slot("head.mu.w")), g.parameter(slot("head.mu.b")));

    Var z;
    if (cfg_.ablation.deterministic) {
      z = out.mu;
    } else {
      out.logvar = g.fc(d, g.parameter(slot("head.logvar.w")), g.parameter(slot("head.logvar.b")));
      Tensor<T> noise = eps ? *eps : Tensor<T>({n, cfg_.latent});
      if (!eps) noise.fill(T{0});
      z = g.reparam_sample(out.mu, out.logvar, std::move(noise));
    }

    Var dec_in = (cfg_.ablation.skip_context && have_ctx) ? g.concat_last(z, ctx) : z;
    Var h2 = g.relu(g.fc(dec_in, g.parameter(slot("dec.fc.w")), g.parameter(slot("dec.fc.b"))));
    Var h3 = g.reshape(h2, {n, s, s, c});
    // The skip connection copies the input grid alongside h3; their shapes
    // already agree, so the "crop" is the identity.
    Var out_in = cfg_.ablation.skip_main ? g.concat_last(h3, out.x) : h3;
    out.xhat = g.sigmoid(g.conv2d(out_in, g.parameter(slot("dec.out.kernel")),
                                  g.parameter(slot("dec.out.bias")), 1, Padding::same));
    return out;
  }

  /// Reconstruction + weighted KL loss over a batch.
  LossVars<T> loss(Graph<T>& g, const ForwardVars<T>& fwd, const ModelBatch<T>& batch) const {
    LossVars<T> out;
    out.bce = g.bce_sum_mean(fwd.xhat, batch.x, static_cast<T>(cfg_.clamp_eps));
    if (cfg_.ablation.deterministic) {
      out.total = out.bce;
    } else {
      out.kl = g.kl_standard_normal_mean(fwd.mu, fwd.logvar);
      out.total = g.add(out.bce, g.scale(out.kl, static_cast<T>(cfg_.kl_weight)));
    }
    return out;
  }

  /// Deterministic reconstruction of a single sample (z = mu).
  Tensor<T> reconstruct(const Sample& sample) const {
    Graph<T> g(const_cast<ParameterStore<T>*>(&params_));
    ModelBatch<T> batch = make_batch({&sample});
    ForwardVars<T> fwd = forward(g, batch, nullptr);
    const Tensor<T>& xhat = g.value(fwd.xhat);
    return xhat.reshaped({cfg_.grid_size, cfg_.grid_size, cfg_.class_count});
  }

  void save_checkpoint(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw io_error("cannot create checkpoint file: " + path);
    out.write(checkpoint_magic, 8);
    write_u32(out, checkpoint_version);
    const std::string cfg_text = nlohmann::json(cfg_).dump();
    write_u64(out, cfg_text.size());
    out.write(cfg_text.data(), static_cast<std::streamsize>(cfg_text.size()));
    write_u64(out, static_cast<std::uint64_t>(params_.size()) * 2);
    for (const auto& p : params_) {
      write_tensor(out, "p:" + p.name, p.value);
      write_tensor(out, "c:" + p.name, p.cache);
    }
    if (!out) throw io_error("failed while writing checkpoint: " + path);
  }

  static CadnetModel load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw io_error("cannot open checkpoint file: " + path);
    char magic[8];
    in.read(magic, 8);
    if (!in || std::memcmp(magic, checkpoint_magic, 8) != 0)
      throw io_error(path + " is not a model checkpoint");
    const std::uint32_t version = read_u32(in, path);
    if (version != checkpoint_version)
      throw io_error("unsupported checkpoint version " + std::to_string(version) + " in " + path);
    const std::uint64_t cfg_len = read_u64(in, path);
    std::string cfg_text(cfg_len, '\0');
    in.read(cfg_text.data(), static_cast<std::streamsize>(cfg_len));
    if (!in) throw io_error("truncated checkpoint config in " + path);
    nlohmann::json cfg_json = nlohmann::json::parse(cfg_text, nullptr, false);
    if (cfg_json.is_discarded()) throw io_error("corrupt checkpoint config in " + path);
    CadnetModel model(cfg_json.get<ModelConfig>());
    const std::uint64_t tensor_count = read_u64(in, path);
    std::vector<bool> filled(static_cast<std::size_t>(model.params_.size()) * 2, false);
    for (std::uint64_t t = 0; t < tensor_count; ++t) {
      std::string name;
      Tensor<float> data = read_tensor(in, path, name);
      const bool is_cache = name.rfind("c:", 0) == 0;
      const bool is_value = name.rfind("p:", 0) == 0;
      if (!is_cache && !is_value)
        throw io_error("checkpoint " + path + " holds unknown tensor '" + name + "'");
      const int slot = model.params_.find(name.substr(2));
      if (slot < 0)
        throw io_error("checkpoint " + path + " holds unknown tensor '" + name + "'");
      auto& p = model.params_.at(slot);
      Tensor<T>& target = is_value ? p.value : p.cache;
      if (data.shape() != target.shape())
        throw io_error("checkpoint tensor '" + name + "' has shape " +
                       shape_to_string(data.shape()) + ", model expects " +
                       shape_to_string(target.shape()));
      for (std::int64_t i = 0; i < data.numel(); ++i) target[i] = static_cast<T>(data[i]);
      filled[static_cast<std::size_t>(slot) * 2 + (is_cache ? 1 : 0)] = true;
    }
    for (int slot = 0; slot < model.params_.size(); ++slot) {
      if (!filled[static_cast<std::size_t>(slot) * 2])
        throw io_error("checkpoint " + path + " is missing tensor 'p:" +
                       model.params_.at(slot).name + "'");
      if (!filled[static_cast<std::size_t>(slot) * 2 + 1])
        throw io_error("checkpoint " + path + " is missing tensor 'c:" +
                       model.params_.at(slot).name + "'");
    }
    return model;
  }

 private:
  static constexpr const char checkpoint_magic[9] = "CADNETCK";
  static constexpr std::uint32_t checkpoint_version = 1;

  static double normalize(double v, double lo, double hi) {
    if (hi <= lo) return 0.5;
    const double t = (v - lo) / (hi - lo);
    return t < 0.0 ? 0.0 : (t > 1.0 ? 1.0 : t);
  }

  typename Graph<T>::Var branch_forward(Graph<T>& g, const std::string& name,
                                        typename Graph<T>::Var input) const {
    using Var = typename Graph<T>::Var;
    Var h = g.relu(g.fc(input, g.parameter(slot("ctx." + name + ".embed.w")),
                        g.parameter(slot("ctx." + name + ".embed.b"))));
    h = g.relu(g.fc(h, g.parameter(slot("ctx." + name + ".fc0.w")),
                    g.parameter(slot("ctx." + name + ".fc0.b"))));
    h = g.relu(g.fc(h, g.parameter(slot("ctx." + name + ".fc1.w")),
                    g.parameter(slot("ctx." + name + ".fc1.b"))));
    return h;
  }

  void add_fc(const std::string& prefix, int in, int out) {
    params_.add(prefix + ".w", Tensor<T>({in, out}));
    params_.add(prefix + ".b", Tensor<T>({out}));
  }

  void build_slots() {
    const int s = cfg_.grid_size, c = cfg_.class_count, k = cfg_.conv_kernel;
    int channels = c;
    for (std::size_t layer = 0; layer < cfg_.conv_channels.size(); ++layer) {
      const int out_ch = cfg_.conv_channels[layer];
      params_.add("enc.conv" + std::to_string(layer) + ".kernel",
                  Tensor<T>({k, k, channels, out_ch}));
      params_.add("enc.conv" + std::to_string(layer) + ".bias", Tensor<T>({out_ch}));
      channels = out_ch;
    }
    add_fc("enc.fc", s * s * channels, cfg_.encoder_fc);
    if (cfg_.ablation.use_time) {
      add_fc("ctx.time.embed", 2, cfg_.embed_width);
      add_fc("ctx.time.fc0", cfg_.embed_width, cfg_.time_feat);
      add_fc("ctx.time.fc1", cfg_.time_feat, cfg_.time_feat);
    }
    if (cfg_.ablation.use_gps) {
      add_fc("ctx.gps.embed", 2, cfg_.embed_width);
      add_fc("ctx.gps.fc0", cfg_.embed_width, cfg_.gps_feat);
      add_fc("ctx.gps.fc1", cfg_.gps_feat, cfg_.gps_feat);
    }
    if (cfg_.ablation.use_frame) {
      add_fc("ctx.frame.embed", cfg_.frame_dim, cfg_.frame_feat);
      add_fc("ctx.frame.fc0", cfg_.frame_feat, cfg_.frame_feat);
      add_fc("ctx.frame.fc1", cfg_.frame_feat, cfg_.frame_feat);
    }
    const int d_width = cfg_.encoder_fc + cfg_.context_width();
    add_fc("head.mu", d_width, cfg_.latent);
    if (!cfg_.ablation.deterministic) add_fc("head.logvar", d_width, cfg_.latent);
    const int dec_in = cfg_.latent + (cfg_.ablation.skip_context ? cfg_.context_width() : 0);
    add_fc("dec.fc", dec_in, cfg_.h2_width());
    const int out_in_ch = cfg_.ablation.skip_main ? 2 * c : c;
    params_.add("dec.out.kernel", Tensor<T>({k, k, out_in_ch, c}));
    params_.add("dec.out.bias", Tensor<T>({c}));
  }

  int slot(const std::string& name) const {
    const int idx = params_.find(name);
    if (idx < 0) throw usage_error("model has no parameter named " + name);
    return idx;
  }

  double init_scale(const std::string& name) const {
    if (name.size() > 2 && name.compare(name.size() - 2, 2, ".b") == 0) return 0.0;
    if (name.rfind("dec.out.bias", 0) == 0 || name.find(".bias") != std::string::npos) return 0.0;
    const int slot_idx = params_.find(name);
    const auto& shape = params_.at(slot_idx).value.shape();
    std::int64_t fan_in = 1;
    for (std::size_t i = 0; i + 1 < shape.size(); ++i) fan_in *= shape[i];
    // Heads and the output conv feed linear/sigmoid units: Xavier scale.
    const bool linear_out = name.rfind("head.", 0) == 0 || name.rfind("dec.out", 0) == 0;
    const double gain = linear_out ? 1.0 : 2.0;
    return std::sqrt(gain / static_cast<double>(fan_in));
  }

  static void write_u32(std::ofstream& out, std::uint32_t v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof v);
  }
  static void write_u64(std::ofstream& out, std::uint64_t v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof v);
  }
  static std::uint32_t read_u32(std::ifstream& in, const std::string& path) {
    std::uint32_t v = 0;
    in.read(reinterpret_cast<char*>(&v), sizeof v);
    if (!in) throw io_error("truncated checkpoint: " + path);
    return v;
  }
  static std::uint64_t read_u64(std::ifstream& in, const std::string& path) {
    std::uint64_t v = 0;
    in.read(reinterpret_cast<char*>(&v), sizeof v);
    if (!in) throw io_error("truncated checkpoint: " + path);
    return v;
  }

  void write_tensor(std::ofstream& out, const std::string& name, const Tensor<T>& t) const {
    write_u32(out, static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_u32(out, static_cast<std::uint32_t>(t.rank()));
    for (int i = 0; i < t.rank(); ++i) write_u32(out, static_cast<std::uint32_t>(t.extent(i)));
    if constexpr (std::is_same_v<T, float>) {
      out.write(reinterpret_cast<const char*>(t.data()),
                static_cast<std::streamsize>(t.numel() * sizeof(float)));
    } else {
      std::vector<float> buf(static_cast<std::size_t>(t.numel()));
      for (std::int64_t i = 0; i < t.numel(); ++i) buf[static_cast<std::size_t>(i)] = static_cast<float>(t[i]);
      out.write(reinterpret_cast<const char*>(buf.data()),
                static_cast<std::streamsize>(buf.size() * sizeof(float)));
    }
  }

  static Tensor<float> read_tensor(std::ifstream& in, const std::string& path, std::string& name) {
    const std::uint32_t name_len = read_u32(in, path);
    if (name_len > 4096) throw io_error("corrupt checkpoint tensor name in " + path);
    name.resize(name_len);
    in.read(name.data(), name_len);
    const std::uint32_t rank = read_u32(in, path);
    if (rank > 8) throw io_error("corrupt checkpoint tensor rank in " + path);
    Shape shape;
    for (std::uint32_t i = 0; i < rank; ++i)
      shape.push_back(static_cast<int>(read_u32(in, path)));
    Tensor<float> t(shape);
    in.read(reinterpret_cast<char*>(t.data()),
            static_cast<std::streamsize>(t.numel() * sizeof(float)));
    if (!in) throw io_error("truncated checkpoint tensor '" + name + "' in " + path);
    t.require_finite(("checkpoint tensor " + name).c_str());
    return t;
  }

  ModelConfig cfg_;
  ParameterStore<T> params_;
};

}  // namespace cadnet
