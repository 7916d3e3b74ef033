#include "daash/model.hpp"

#include "binary_io.hpp"
#include "daash/adam.hpp"
#include "daash/attacks.hpp"
#include "daash/error.hpp"
#include "daash/io.hpp"
#include "daash/rng.hpp"

#include <cmath>
#include <functional>
#include <numeric>
#include <sstream>

namespace daash {
namespace {

Index pooled(Index n) { return (n - 2) / 2 + 1; }

std::string join(const std::vector<Index>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

// Last argument is the training progress ramp in (0, 1].
using Perturb =
    std::function<Tensor(const TrainedModel&, const Tensor&, const std::vector<int>&, std::uint64_t, double)>;

TrainedModel train_impl(const LabeledBatch& data, const ClassifierSpec& spec, const TrainConfig& cfg,
                        const Perturb& perturb) {
  spec.validate();
  data.validate(spec.classes);
  if (data.size() == 0) throw ConfigError("training data is empty");
  if (!(cfg.lr > 0.0)) throw ConfigError("learning rate must be positive");
  if (cfg.epochs < 0 || cfg.batch_size < 1) throw ConfigError("epochs must be >= 0 and batch size >= 1");
  if (data.images.shape() != spec.input_shape(data.size())) {
    throw ShapeError("training images " + to_string(data.images.shape()) + " do not match spec input " +
                     to_string(spec.input_shape(data.size())));
  }

  TrainedModel model = init_model(spec, mix_seed(cfg.seed, "init"));
  std::vector<std::string> names;
  std::vector<Tensor> params;
  for (auto& [name, w] : model.weights) {
    names.push_back(name);
    params.push_back(w);
  }
  AdamState adam = make_adam_state(params);
  Rng rng(mix_seed(cfg.seed, "shuffle"));
  std::vector<Index> order(static_cast<std::size_t>(data.size()));
  std::uint64_t step = 0;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), Index{0});
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
      std::span<const Index> rows(order.data() + start, end - start);
      LabeledBatch mb = data.subset(rows);
      try {
        if (perturb) {
          const double warmup = std::max(1.0, cfg.epochs / 2.0);
          const double ramp = std::min(1.0, (epoch + static_cast<double>(end) / order.size()) / warmup);
          mb.images = perturb(model, mb.images, mb.labels, mix_seed(cfg.seed, step), ramp);
        }
        ++step;

        Graph g;
        std::map<std::string, Var> vars;
        for (std::size_t k = 0; k < names.size(); ++k) vars[names[k]] = g.variable(params[k]);
        Var logits = forward(g, spec, vars, g.constant(mb.images));
        Var loss = scale(cross_entropy_sum(logits, mb.labels), 1.0 / static_cast<double>(mb.size()));
        Gradients grads = g.backward(loss);
        std::vector<Tensor> gs;
        for (const auto& n : names) gs.push_back(grads[vars[n]]);
        adam_step(params, gs, adam, cfg.lr);
        for (std::size_t k = 0; k < names.size(); ++k) {
          if (!params[k].all_finite()) throw NumericError("non-finite weight '" + names[k] + "'");
          model.weights[names[k]] = params[k];
        }
      } catch (const NumericError& e) {
        throw NumericError("training diverged at epoch " + std::to_string(epoch) + ": " + e.what());
      }
    }
  }
  model.info.epochs = cfg.epochs;
  model.info.seed = cfg.seed;
  model.info.clean_accuracy = accuracy(model, data);
  return model;
}

}  // namespace

void ClassifierSpec::validate() const {
  if (channels < 1 || height < 1 || width < 1) throw ConfigError("input shape must be positive");
  if (classes < 2) throw ConfigError("need at least two classes");
  for (Index h : hidden)
    if (h < 1) throw ConfigError("hidden widths must be positive");
  if (arch == Arch::SmallCnn) {
    if (hidden.size() != 1) throw ConfigError("small-cnn takes exactly one dense hidden width");
    if (conv1 < 1 || conv2 < 1 || kernel < 1 || kernel % 2 == 0) throw ConfigError("bad conv configuration");
    if (height < 4 || width < 4) throw ConfigError("small-cnn needs images of at least 4x4");
  }
}

std::map<std::string, Shape> ClassifierSpec::weight_shapes() const {
  std::map<std::string, Shape> s;
  if (arch == Arch::SmallCnn) {
    s["conv1.w"] = {conv1, channels, kernel, kernel};
    s["conv1.b"] = {conv1};
    s["conv2.w"] = {conv2, conv1, kernel, kernel};
    s["conv2.b"] = {conv2};
    const Index flat = conv2 * pooled(pooled(height)) * pooled(pooled(width));
    s["fc1.w"] = {flat, hidden[0]};
    s["fc1.b"] = {hidden[0]};
    s["fc2.w"] = {hidden[0], classes};
    s["fc2.b"] = {classes};
  } else {
    Index in = channels * height * width;
    for (std::size_t i = 0; i <= hidden.size(); ++i) {
      const Index out = i < hidden.size() ? hidden[i] : classes;
      const std::string n = "fc" + std::to_string(i + 1);
      s[n + ".w"] = {in, out};
      s[n + ".b"] = {out};
      in = out;
    }
  }
  return s;
}

std::string serialize(const ClassifierSpec& spec) {
  std::ostringstream os;
  os << "arch=" << (spec.arch == Arch::SmallCnn ? "small-cnn" : "mlp") << '\n'
     << "channels=" << spec.channels << '\n'
     << "height=" << spec.height << '\n'
     << "width=" << spec.width << '\n'
     << "classes=" << spec.classes << '\n'
     << "hidden=" << join(spec.hidden) << '\n'
     << "conv1=" << spec.conv1 << '\n'
     << "conv2=" << spec.conv2 << '\n'
     << "kernel=" << spec.kernel << '\n';
  return os.str();
}

ClassifierSpec parse_classifier_spec(const std::string& text) {
  auto kv = parse_key_values(text);
  ClassifierSpec s;
  auto get = [&](const char* key) -> const std::string& {
    auto it = kv.find(key);
    if (it == kv.end()) throw ConfigError(std::string("classifier spec missing '") + key + "'");
    return it->second;
  };
  const std::string& arch = get("arch");
  if (arch == "small-cnn") s.arch = Arch::SmallCnn;
  else if (arch == "mlp") s.arch = Arch::Mlp;
  else throw ConfigError("unknown architecture '" + arch + "'");
  s.channels = parse_int(get("channels"), "channels");
  s.height = parse_int(get("height"), "height");
  s.width = parse_int(get("width"), "width");
  s.classes = static_cast<int>(parse_int(get("classes"), "classes"));
  s.hidden.clear();
  std::stringstream hs(get("hidden"));
  for (std::string item; std::getline(hs, item, ',');)
    if (!item.empty()) s.hidden.push_back(parse_int(item, "hidden"));
  s.conv1 = parse_int(get("conv1"), "conv1");
  s.conv2 = parse_int(get("conv2"), "conv2");
  s.kernel = parse_int(get("kernel"), "kernel");
  s.validate();
  return s;
}

TrainedModel init_model(const ClassifierSpec& spec, std::uint64_t seed) {
  spec.validate();
  TrainedModel m;
  m.spec = spec;
  m.info.seed = seed;
  Rng rng(seed);
  for (const auto& [name, shape] : spec.weight_shapes()) {
    Tensor t(shape, 0.0);
    if (name.ends_with(".w")) {
      const Index fan_in = shape.size() == 4 ? shape[1] * shape[2] * shape[3] : shape[0];
      const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
      for (Index i = 0; i < t.size(); ++i) t[i] = rng.uniform(-bound, bound);
    }
    m.weights.emplace(name, std::move(t));
  }
  return m;
}

Var forward(Graph&, const ClassifierSpec& spec, const std::map<std::string, Var>& w, Var images) {
  const Tensor& x = images.value();
  if (x.rank() != 4 || x.shape() != spec.input_shape(x.dim(0))) {
    throw ShapeError("model expects " + to_string(spec.input_shape(x.rank() > 0 ? x.dim(0) : 0)) + ", got " +
                     to_string(x.shape()));
  }
  auto W = [&](const std::string& n) -> Var {
    auto it = w.find(n);
    if (it == w.end()) throw ConfigError("missing weight '" + n + "'");
    return it->second;
  };
  const Index batch = x.dim(0);
  // Pixels are centred on mid-grey before the first layer.
  Var centred = add_scalar(images, -0.5);
  if (spec.arch == Arch::SmallCnn) {
    Var h = avg_pool(relu(bias_add(conv2d(centred, W("conv1.w")), W("conv1.b"))), 2, 2);
    h = avg_pool(relu(bias_add(conv2d(h, W("conv2.w")), W("conv2.b"))), 2, 2);
    h = reshape(h, {batch, h.value().size() / std::max<Index>(batch, 1)});
    h = relu(bias_add(matmul(h, W("fc1.w")), W("fc1.b")));
    return bias_add(matmul(h, W("fc2.w")), W("fc2.b"));
  }
  Var h = reshape(centred, {batch, spec.channels * spec.height * spec.width});
  const std::size_t layers = spec.hidden.size() + 1;
  for (std::size_t i = 1; i <= layers; ++i) {
    const std::string n = "fc" + std::to_string(i);
    h = bias_add(matmul(h, W(n + ".w")), W(n + ".b"));
    if (i < layers) h = relu(h);
  }
  return h;
}

Var forward(Graph& g, const TrainedModel& model, Var images) {
  std::map<std::string, Var> vars;
  for (const auto& [name, t] : model.weights) vars.emplace(name, g.constant(t));
  return forward(g, model.spec, vars, images);
}

Tensor predict(const TrainedModel& model, const Tensor& images) {
  // Chunked so large evaluation sets do not materialise every activation.
  constexpr Index kChunk = 128;
  if (images.rank() != 4) throw ShapeError("predict: expected (N, C, H, W), got " + to_string(images.shape()));
  const Index n = images.dim(0);
  if (n <= kChunk) {
    Graph g;
    return forward(g, model, g.constant(images)).value();
  }
  std::vector<Tensor> parts;
  for (Index b = 0; b < n; b += kChunk) {
    Graph g;
    parts.push_back(forward(g, model, g.constant(images.slice(b, std::min(n, b + kChunk)))).value());
  }
  return concat_rows(parts);
}

Tensor predict_probs(const TrainedModel& model, const Tensor& images) {
  Graph g;
  return softmax(g.constant(predict(model, images))).value();
}

std::vector<int> predict_labels(const TrainedModel& model, const Tensor& images) {
  const Tensor logits = predict(model, images);
  const Index n = logits.dim(0), c = logits.dim(1);
  std::vector<int> out(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) {
    Index best = 0;
    logits.array().segment(i * c, c).maxCoeff(&best);
    out[static_cast<std::size_t>(i)] = static_cast<int>(best);
  }
  return out;
}

double accuracy(const TrainedModel& model, const LabeledBatch& data) {
  if (data.size() == 0) return 0.0;
  const auto pred = predict_labels(model, data.images);
  Index hits = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) hits += pred[i] == data.labels[i];
  return static_cast<double>(hits) / static_cast<double>(data.size());
}

Var cross_entropy_sum(Var logits, std::span<const int> labels) {
  const Tensor& z = logits.value();
  if (z.rank() != 2 || z.dim(0) != static_cast<Index>(labels.size())) {
    throw ShapeError("cross_entropy: logits " + to_string(z.shape()) + " vs " + std::to_string(labels.size()) +
                     " labels");
  }
  Graph& g = logits.graph();
  Var picked = mul(log_softmax(logits), g.constant(one_hot(labels, static_cast<int>(z.dim(1)))));
  return scale(sum(picked), -1.0);
}

InputGradient loss_input_gradient(const TrainedModel& model, const Tensor& images, std::span<const int> labels) {
  Graph g;
  Var x = g.variable(images);
  Var loss = cross_entropy_sum(forward(g, model, x), labels);
  Gradients grads = g.backward(loss);
  return {loss.value().item(), grads[x]};
}

TrainedModel train_classifier(const LabeledBatch& data, const ClassifierSpec& spec, const TrainConfig& cfg) {
  return train_impl(data, spec, cfg, {});
}

TrainedModel adversarial_train(const LabeledBatch& data, const ClassifierSpec& spec, const TrainConfig& cfg,
                               const AttackSpec& pgd) {
  if (pgd.kind != AttackKind::Pgd) throw ConfigError("adversarial training needs a pgd attack spec");
  pgd.validate();
  Perturb perturb = [&pgd](const TrainedModel& m, const Tensor& x, const std::vector<int>& y, std::uint64_t seed,
                           double ramp) {
    AttackSpec s = pgd;
    s.seed = seed;
    s.eps *= ramp;
    s.step_size *= ramp;
    return run_base_attack(m, x, y, s);
  };
  TrainedModel m = train_impl(data, spec, cfg, perturb);
  m.info.adversarial = true;
  return m;
}

std::string encode_model(const TrainedModel& model) {
  detail::ByteWriter w;
  w.bytes("AFRG1", 5);
  std::string header = serialize(model.spec);
  header += "train_epochs=" + std::to_string(model.info.epochs) + '\n';
  header += "train_seed=" + std::to_string(model.info.seed) + '\n';
  header += std::string("adversarial=") + (model.info.adversarial ? "1" : "0") + '\n';
  header += "clean_accuracy=" + format_double(model.info.clean_accuracy) + '\n';
  w.text(header);
  w.u32(static_cast<std::uint32_t>(model.weights.size()));
  for (const auto& [name, t] : model.weights) {
    w.text(name);
    w.u32(static_cast<std::uint32_t>(t.rank()));
    for (Index d : t.shape()) w.u64(static_cast<std::uint64_t>(d));
    for (Index i = 0; i < t.size(); ++i) w.f64(t[i]);
  }
  return w.take();
}

TrainedModel decode_model(const std::string& bytes) {
  detail::ByteReader r(bytes);
  r.expect_magic("AFRG1");
  const std::string header = r.text();
  TrainedModel m;
  m.spec = parse_classifier_spec(header);
  auto kv = parse_key_values(header);
  auto get = [&](const char* k) {
    auto it = kv.find(k);
    if (it == kv.end()) throw IoError(std::string("weight file header missing '") + k + "'");
    return it->second;
  };
  m.info.epochs = static_cast<int>(parse_int(get("train_epochs"), "train_epochs"));
  m.info.seed = std::stoull(get("train_seed"));
  m.info.adversarial = get("adversarial") == "1";
  m.info.clean_accuracy = parse_double(get("clean_accuracy"), "clean_accuracy");
  const auto expected = m.spec.weight_shapes();
  const std::uint32_t count = r.u32();
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string name = r.text();
    const std::uint32_t rank = r.u32();
    Shape shape(rank);
    for (auto& d : shape) d = static_cast<Index>(r.u64());
    auto it = expected.find(name);
    if (it == expected.end() || it->second != shape) {
      throw IoError("weight '" + name + "' with shape " + to_string(shape) + " does not match the spec");
    }
    Tensor t(shape);
    for (Index k = 0; k < t.size(); ++k) t[k] = r.f64();
    m.weights.emplace(std::move(name), std::move(t));
  }
  if (m.weights.size() != expected.size()) throw IoError("weight file is missing weights");
  if (!r.done()) throw IoError("trailing bytes after weights at offset " + std::to_string(r.offset()));
  return m;
}

void save_model(const TrainedModel& model, const std::filesystem::path& path) {
  write_file_atomic(path, encode_model(model));
}

TrainedModel load_model(const std::filesystem::path& path) { return decode_model(read_file(path)); }

}  // namespace daash
