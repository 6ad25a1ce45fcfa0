#include "mama/eval.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <memory>

#include <json.hpp>

#include "mama/errors.hpp"
#include "mama/tokenizer.hpp"

namespace mama {

// ---- metrics -------------------------------------------------------------------------

Confusion confusion_matrix(const std::vector<std::size_t>& labels, const std::vector<std::size_t>& predictions,
                           std::size_t k) {
  if (labels.size() != predictions.size()) throw ShapeError("labels and predictions differ in length");
  Confusion c(k, std::vector<std::int64_t>(k, 0));
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] >= k || predictions[i] >= k) throw InputError("class index out of range");
    ++c[labels[i]][predictions[i]];
  }
  return c;
}

std::vector<std::optional<double>> per_class_recall(const Confusion& c) {
  std::vector<std::optional<double>> out;
  for (std::size_t k = 0; k < c.size(); ++k) {
    if (c[k].size() != c.size()) throw ShapeError("confusion matrix must be square");
    std::int64_t support = 0;
    for (auto v : c[k]) support += v;
    if (support > 0) out.emplace_back(static_cast<double>(c[k][k]) / static_cast<double>(support));
    else out.emplace_back(std::nullopt);
  }
  return out;
}

double balanced_accuracy(const Confusion& c) {
  double acc = 0.0;
  std::size_t n = 0;
  for (const auto& r : per_class_recall(c))
    if (r) {
      acc += *r;
      ++n;
    }
  if (n == 0) throw InputError("balanced_accuracy: confusion matrix is empty");
  return acc / static_cast<double>(n);
}

std::optional<double> binary_auc(const std::vector<double>& scores, const std::vector<bool>& positive) {
  if (scores.size() != positive.size()) throw ShapeError("binary_auc: length mismatch");
  const std::size_t n = scores.size();
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  std::vector<double> rank(n);
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j + 1 < n && scores[order[j + 1]] == scores[order[i]]) ++j;
    const double mid = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
    for (std::size_t t = i; t <= j; ++t) rank[order[t]] = mid;
    i = j + 1;
  }
  double pos_rank = 0.0;
  std::size_t np = 0;
  for (std::size_t i = 0; i < n; ++i)
    if (positive[i]) {
      pos_rank += rank[i];
      ++np;
    }
  const std::size_t nn = n - np;
  if (np == 0 || nn == 0) return std::nullopt;
  const double u = pos_rank - static_cast<double>(np) * (np + 1) / 2.0;
  return u / (static_cast<double>(np) * static_cast<double>(nn));
}

std::optional<double> auc(const Matrix& scores, const std::vector<std::size_t>& labels) {
  if (scores.rows() != labels.size()) throw ShapeError("auc: one score row per label expected");
  const std::size_t k = scores.cols();
  if (k < 2) throw InputError("auc needs at least two classes");
  auto column_auc = [&](std::size_t cls) {
    std::vector<double> s(labels.size());
    std::vector<bool> pos(labels.size());
    for (std::size_t i = 0; i < labels.size(); ++i) {
      s[i] = scores(i, cls);
      pos[i] = labels[i] == cls;
    }
    return binary_auc(s, pos);
  };
  if (k == 2) return column_auc(1);
  double acc = 0.0;
  std::size_t n = 0;
  for (std::size_t cls = 0; cls < k; ++cls)
    if (auto a = column_auc(cls)) {
      acc += *a;
      ++n;
    }
  if (n == 0) return std::nullopt;
  return acc / static_cast<double>(n);
}

std::pair<std::optional<double>, std::optional<double>> sensitivity_specificity(const Confusion& c) {
  if (c.size() != 2 || c[0].size() != 2 || c[1].size() != 2)
    throw ShapeError("sensitivity_specificity needs a 2x2 confusion matrix");
  const auto tp = c[1][1], fn = c[1][0], tn = c[0][0], fp = c[0][1];
  std::optional<double> sen, spe;
  if (tp + fn > 0) sen = static_cast<double>(tp) / static_cast<double>(tp + fn);
  if (tn + fp > 0) spe = static_cast<double>(tn) / static_cast<double>(tn + fp);
  return {sen, spe};
}

std::size_t argmax_row(const Matrix& m, std::size_t row) {
  std::size_t best = 0;
  for (std::size_t c = 1; c < m.cols(); ++c)
    if (m(row, c) > m(row, best)) best = c;
  return best;
}

Matrix softmax_rows(const Matrix& scores, double temperature) {
  if (!(temperature > 0)) throw ConfigError("softmax temperature must be positive");
  Matrix p(scores.rows(), scores.cols());
  for (std::size_t r = 0; r < scores.rows(); ++r) {
    const auto row = scores.row(r);
    const double m = *std::max_element(row.begin(), row.end());
    double s = 0.0;
    for (std::size_t c = 0; c < scores.cols(); ++c) s += p(r, c) = std::exp((row[c] - m) / temperature);
    for (std::size_t c = 0; c < scores.cols(); ++c) p(r, c) /= s;
  }
  return p;
}

namespace {
nlohmann::ordered_json opt(const std::optional<double>& v) {
  return v ? nlohmann::ordered_json(*v) : nlohmann::ordered_json(nullptr);
}
}  // namespace

std::string EvalReport::to_json() const {
  nlohmann::ordered_json j;
  j["mode"] = mode;
  j["fraction"] = fraction;
  j["num_classes"] = num_classes;
  j["num_samples"] = num_samples;
  j["balanced_accuracy"] = balanced_accuracy;
  j["auc"] = opt(auc);
  j["sensitivity"] = opt(sensitivity);
  j["specificity"] = opt(specificity);
  for (std::size_t k = 0; k < per_class_recall.size(); ++k)
    j["recall_class_" + std::to_string(k)] = opt(per_class_recall[k]);
  std::string w;
  for (const auto& s : warnings) w += (w.empty() ? "" : "; ") + s;
  j["warnings"] = w;
  return j.dump(2) + "\n";
}

std::string EvalReport::confusion_csv() const {
  std::string out = "true";
  for (std::size_t k = 0; k < confusion.size(); ++k) out += ",pred_" + std::to_string(k);
  out += "\n";
  for (std::size_t k = 0; k < confusion.size(); ++k) {
    out += std::to_string(k);
    for (auto v : confusion[k]) out += "," + std::to_string(v);
    out += "\n";
  }
  return out;
}

EvalReport make_report(const std::string& mode, const Matrix& probs, const std::vector<std::size_t>& labels,
                       std::size_t k, const std::vector<std::size_t>& excluded) {
  if (probs.rows() != labels.size() || probs.cols() != k) throw ShapeError("make_report: score shape mismatch");
  EvalReport r;
  r.mode = mode;
  r.num_classes = k;
  r.num_samples = labels.size();
  std::vector<std::size_t> pred(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) pred[i] = argmax_row(probs, i);
  r.confusion = confusion_matrix(labels, pred, k);
  r.per_class_recall = per_class_recall(r.confusion);
  for (std::size_t cls : excluded)
    if (cls < k) r.per_class_recall[cls].reset();
  double acc = 0.0;
  std::size_t n = 0;
  for (const auto& v : r.per_class_recall)
    if (v) {
      acc += *v;
      ++n;
    }
  if (n == 0) throw InputError("no class with support to evaluate");
  r.balanced_accuracy = acc / static_cast<double>(n);
  if (labels.size() >= 2) r.auc = auc(probs, labels);
  if (k == 2) std::tie(r.sensitivity, r.specificity) = sensitivity_specificity(r.confusion);
  return r;
}

// ---- zero-shot -------------------------------------------------------------------------

ZeroShotSpec ZeroShotSpec::for_target(SynthTarget target, std::size_t k) {
  ZeroShotSpec s;
  s.target = target;
  for (std::size_t i = 0; i < k; ++i)
    s.class_labels.push_back(target == SynthTarget::Density ? to_string(static_cast<Density>(i))
                                                            : to_string(static_cast<Birads>(i)));
  return s;
}

Caption zero_shot_prompt(const ImageRecord& record, const std::string& label, const ZeroShotSpec& spec,
                         const CaptionTemplate& tmpl) {
  ImageRecord r = record;
  std::vector<std::string> fields;
  bool ok = false;
  if (spec.target == SynthTarget::Density) {
    if (const auto d = parse_density(label)) r.density = *d, ok = true;
    fields = {"{density}", "{density_desc}"};
  } else {
    if (const auto b = parse_birads(label)) r.birads = *b, ok = true;
    fields = {"{birads}", "{impression}"};
  }
  if (!ok) throw ConfigError("class label '" + label + "' cannot be substituted as " + to_string(spec.target));
  CaptionOptions opts;
  bool mentioned = false;
  for (const auto& seg : tmpl.segments()) {
    if (seg.segment != Segment::Composition && seg.segment != Segment::Findings &&
        seg.segment != Segment::Impression && seg.segment != Segment::Assessment)
      continue;
    const bool has = std::any_of(fields.begin(), fields.end(),
                                 [&](const std::string& f) { return seg.text.find(f) != std::string::npos; });
    if (has) mentioned = true;
    else opts.omit.insert(seg.segment);
  }
  if (!mentioned) throw TemplateError("template has no segment mentioning the " + to_string(spec.target) + " field");
  Rng unused(0);
  return build_structured_caption(r, tmpl, 0.0, unused, opts);
}

namespace {

void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn) {
  std::vector<std::exception_ptr> errors(n);
#pragma omp parallel for schedule(dynamic)
  for (std::size_t i = 0; i < n; ++i) {
    try {
      fn(i);
    } catch (...) {
      errors[i] = std::current_exception();
    }
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

std::vector<double> unit(const Matrix& row_vec) { return l2_normalize(row_vec.values()); }

}  // namespace

Matrix image_embeddings(const ParamStore& params, const EncoderConfig& encoder,
                        const std::vector<ImageRecord>& records, const ImageLoader& load) {
  Matrix out(records.size(), encoder.embed_dim);
  for (const auto& r : records) load(r);  // decode serially before the parallel pass
  parallel_for(records.size(), [&](std::size_t i) {
    const auto v = unit(encode_image(load(records[i]), params, encoder).global);
    std::copy(v.begin(), v.end(), out.row(i).begin());
  });
  return out;
}

ZeroShotResult zero_shot_classify(const ParamStore& params, const EncoderConfig& encoder,
                                  const std::vector<ImageRecord>& records, const ImageLoader& load,
                                  const ZeroShotSpec& spec, const CaptionTemplate& tmpl) {
  const std::size_t k = spec.class_labels.size();
  if (k < 2) throw ConfigError("zero-shot needs at least two classes");
  const Matrix img = image_embeddings(params, encoder, records, load);

  // Prompts depend on the record only through its meta, so many repeat.
  std::map<std::string, std::size_t> prompt_index;
  std::vector<std::string> prompts;
  std::vector<std::size_t> which(records.size() * k);
  for (std::size_t i = 0; i < records.size(); ++i)
    for (std::size_t c = 0; c < k; ++c) {
      const std::string text = zero_shot_prompt(records[i], spec.class_labels[c], spec, tmpl).text;
      auto [it, added] = prompt_index.try_emplace(text, prompts.size());
      if (added) prompts.push_back(text);
      which[i * k + c] = it->second;
    }
  std::vector<std::vector<double>> text_emb(prompts.size());
  parallel_for(prompts.size(), [&](std::size_t p) {
    Caption cap;
    cap.text = prompts[p];
    cap.sentence_spans = split_sentences(cap.text);
    const auto tok = tokenize(cap, encoder.max_text_tokens, encoder.vocab_size);
    text_emb[p] = unit(encode_text(tok.ids, params, encoder, encoder.text_kind).global);
  });

  ZeroShotResult res;
  res.scores = Matrix(records.size(), k);
  for (std::size_t i = 0; i < records.size(); ++i)
    for (std::size_t c = 0; c < k; ++c) {
      const auto& t = text_emb[which[i * k + c]];
      double s = 0.0;
      for (std::size_t d = 0; d < t.size(); ++d) s += img(i, d) * t[d];
      res.scores(i, c) = s;
    }
  res.probabilities = softmax_rows(res.scores, spec.temperature_for_probs);
  for (std::size_t i = 0; i < records.size(); ++i) res.predictions.push_back(argmax_row(res.scores, i));
  return res;
}

// ---- linear probe ------------------------------------------------------------------------

Standardizer Standardizer::fit(const Matrix& x) {
  if (x.rows() == 0) throw InputError("cannot standardize an empty feature set");
  Standardizer s;
  s.mean.assign(x.cols(), 0.0);
  s.inv_std.assign(x.cols(), 0.0);
  for (std::size_t r = 0; r < x.rows(); ++r)
    for (std::size_t c = 0; c < x.cols(); ++c) s.mean[c] += x(r, c);
  for (double& m : s.mean) m /= static_cast<double>(x.rows());
  for (std::size_t c = 0; c < x.cols(); ++c) {
    double v = 0.0;
    for (std::size_t r = 0; r < x.rows(); ++r) v += (x(r, c) - s.mean[c]) * (x(r, c) - s.mean[c]);
    v /= static_cast<double>(x.rows());
    s.inv_std[c] = 1.0 / std::sqrt(v + 1e-8);
  }
  return s;
}

Matrix Standardizer::apply(const Matrix& x) const {
  Matrix y(x.rows(), x.cols());
  for (std::size_t r = 0; r < x.rows(); ++r)
    for (std::size_t c = 0; c < x.cols(); ++c) y(r, c) = (x(r, c) - mean[c]) * inv_std[c];
  return y;
}

LinearHead train_softmax_regression(const Matrix& x, const std::vector<std::size_t>& labels, std::size_t k,
                                    const ProbeConfig& cfg) {
  if (x.rows() != labels.size() || x.rows() == 0) throw ShapeError("probe: features and labels differ");
  LinearHead h{Matrix(k, x.cols()), Matrix(1, k)};
  const double inv_n = 1.0 / static_cast<double>(x.rows());
  for (std::size_t step = 0; step < cfg.steps; ++step) {
    const Matrix p = head_probabilities(h, x);
    Matrix gw(k, x.cols()), gb(1, k);
    for (std::size_t i = 0; i < x.rows(); ++i)
      for (std::size_t c = 0; c < k; ++c) {
        const double e = (p(i, c) - (labels[i] == c ? 1.0 : 0.0)) * inv_n;
        gb[c] += e;
        for (std::size_t d = 0; d < x.cols(); ++d) gw(c, d) += e * x(i, d);
      }
    for (std::size_t i = 0; i < h.weight.size(); ++i)
      h.weight[i] -= cfg.lr * (gw[i] + cfg.weight_decay * h.weight[i]);
    for (std::size_t c = 0; c < k; ++c) h.bias[c] -= cfg.lr * gb[c];
  }
  return h;
}

Matrix head_probabilities(const LinearHead& h, const Matrix& x) {
  Matrix logits(x.rows(), h.weight.rows());
  for (std::size_t i = 0; i < x.rows(); ++i)
    for (std::size_t c = 0; c < h.weight.rows(); ++c) {
      double s = h.bias[c];
      for (std::size_t d = 0; d < x.cols(); ++d) s += h.weight(c, d) * x(i, d);
      logits(i, c) = s;
    }
  return softmax_rows(logits, 1.0);
}

std::vector<std::size_t> labels_of(const std::vector<ImageRecord>& records, SynthTarget target) {
  std::vector<std::size_t> out;
  for (const auto& r : records) out.push_back(record_class(r, target));
  return out;
}

namespace {
std::vector<std::size_t> absent_classes(const std::vector<std::size_t>& labels, std::size_t k,
                                        std::vector<std::string>& warnings) {
  std::vector<bool> seen(k, false);
  for (auto l : labels) seen.at(l) = true;
  std::vector<std::size_t> out;
  for (std::size_t c = 0; c < k; ++c)
    if (!seen[c]) {
      out.push_back(c);
      warnings.push_back("class " + std::to_string(c) + " absent from the training subsample");
    }
  return out;
}
}  // namespace

EvalReport linear_probe(const ParamStore& params, const EncoderConfig& encoder, const std::vector<Study>& train,
                        const std::vector<Study>& test, double fraction, std::uint64_t seed, SynthTarget target,
                        std::size_t k, const ProbeConfig& cfg, const ImageLoader& load) {
  const auto train_records = flatten(subsample_fraction(train, fraction, seed));
  const auto test_records = flatten(test);
  if (train_records.empty() || test_records.empty()) throw InputError("linear probe needs train and test images");
  const auto y_train = labels_of(train_records, target);
  const Matrix f_train = image_embeddings(params, encoder, train_records, load);
  const Standardizer st = Standardizer::fit(f_train);
  const LinearHead head = train_softmax_regression(st.apply(f_train), y_train, k, cfg);
  const Matrix probs = head_probabilities(head, st.apply(image_embeddings(params, encoder, test_records, load)));
  std::vector<std::string> warnings;
  const auto excluded = absent_classes(y_train, k, warnings);
  EvalReport r = make_report("probe", probs, labels_of(test_records, target), k, excluded);
  r.fraction = fraction;
  r.warnings = warnings;
  return r;
}

// ---- full fine-tune ---------------------------------------------------------------------------

FinetuneConfig FinetuneConfig::full() {
  FinetuneConfig f;
  f.train.optimizer = OptimizerKind::Sgd;
  f.train.lr = 5e-4;
  f.train.weight_decay = 1e-3;
  f.train.total_steps = 8000;
  f.train.warmup_steps = 100;
  f.train.batch_size = 36;
  return f;
}

FinetuneConfig FinetuneConfig::desk() {
  FinetuneConfig f = full();
  f.train.lr = 0.05;
  f.train.total_steps = 150;
  f.train.warmup_steps = 10;
  f.train.batch_size = 16;
  return f;
}

EvalReport full_finetune(const ParamStore& params, const EncoderConfig& encoder, const std::vector<Study>& train,
                         const std::vector<Study>& test, SynthTarget target, std::size_t k,
                         const FinetuneConfig& config, const ImageLoader& load) {
  const TrainConfig& tc = config.train;
  tc.validate();
  const auto train_records = flatten(train);
  const auto test_records = flatten(test);
  if (train_records.empty() || test_records.empty()) throw InputError("fine-tune needs train and test images");
  const auto y_train = labels_of(train_records, target);

  // Vision tower plus a zero head; the text tower is not touched.
  TrainState state;
  for (const auto& [name, p] : params.all())
    if (name.starts_with("vision.")) state.params.add(name, p.value, true, p.decay);
  state.params.add("head.weight", Matrix(k, encoder.embed_dim), true, true);
  state.params.add("head.bias", Matrix(1, k), true, false);
  state.rng = Rng(derive_seed(tc.seed, 7));

  const Standardizer st = Standardizer::fit(image_embeddings(params, encoder, train_records, load));
  const Matrix mean = Matrix::row_vector(st.mean);
  Matrix neg_mean = mean;
  for (double& v : neg_mean.values()) v = -v;
  const Matrix inv_std = Matrix::row_vector(st.inv_std);

  auto features = [&](ParamBinding& b, const Matrix& image) {
    ad::Tape& tape = b.tape();
    ad::Var g = ad::normalize_rows(encode_image_graph(b, image, encoder).global);
    return ad::mul(ad::add_const(g, neg_mean), tape.constant(inv_std));
  };

  for (std::int64_t step = 0; step < tc.total_steps; ++step) {
    std::vector<std::size_t> idx(tc.batch_size);
    for (auto& i : idx) i = uniform_index(state.rng, train_records.size());
    std::vector<std::map<std::string, Matrix>> grads(idx.size());
    const double scale = 1.0 / static_cast<double>(idx.size());
    parallel_for(idx.size(), [&](std::size_t s) {
      ad::Tape tape;
      ParamBinding b(tape, state.params, true);
      ad::Var logits = ad::linear(features(b, load(train_records[idx[s]])), b.get("head.weight"), b.get("head.bias"));
      Matrix onehot(1, k);
      onehot[y_train[idx[s]]] = 1.0;
      ad::Var nll = ad::scale(ad::sum_all(ad::mul(ad::log_softmax_rows(logits), tape.constant(onehot))), -scale);
      tape.backward(nll);
      b.collect_gradients(grads[s]);
    });
    std::map<std::string, Matrix> total;
    for (auto& g : grads)
      for (auto& [name, m] : g) {
        auto [it, added] = total.try_emplace(name, m);
        if (!added)
          for (std::size_t i = 0; i < m.size(); ++i) it->second[i] += m[i];
      }
    apply_update(state, total, lr_at(step, tc), tc);
    ++state.step;
  }

  Matrix probs(test_records.size(), k);
  for (const auto& r : test_records) load(r);
  parallel_for(test_records.size(), [&](std::size_t i) {
    ad::Tape tape;
    ParamBinding b(tape, state.params, false);
    ad::Var logits = ad::linear(features(b, load(test_records[i])), b.get("head.weight"), b.get("head.bias"));
    const Matrix p = softmax_rows(logits.value(), 1.0);
    std::copy(p.values().begin(), p.values().end(), probs.row(i).begin());
  });
  std::vector<std::string> warnings;
  const auto excluded = absent_classes(y_train, k, warnings);
  EvalReport r = make_report("finetune", probs, labels_of(test_records, target), k, excluded);
  r.warnings = warnings;
  return r;
}

}  // namespace mama
