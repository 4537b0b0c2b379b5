#include <catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "rgm/decode.hpp"
#include "rgm/policy.hpp"
#include "rgm/rng.hpp"
#include "rgm/tape.hpp"
#include "rgm/vocab.hpp"

using namespace rgm;

namespace {

PolicyConfig small_config(int n_layers = 2) {
  PolicyConfig cfg;
  cfg.vocab_size = 100;
  cfg.d_model = 32;
  cfg.n_layers = n_layers;
  cfg.n_heads = 2;
  cfg.max_context = 64;
  cfg.dropout_p = 0.0f;
  return cfg;
}

std::vector<int> toks(const Vocabulary& v, const std::string& s) { return v.encode(s); }

}  // namespace

TEST_CASE("config validation") {
  PolicyConfig cfg = small_config();
  cfg.n_layers = 1;
  REQUIRE_THROWS_AS(cfg.validate(), ContractError);
  cfg = small_config();
  cfg.d_model = 30;  // not divisible by heads=2? it is; use heads=4
  cfg.n_heads = 4;
  REQUIRE_THROWS_AS(cfg.validate(), ContractError);
}

TEST_CASE("tape forward shape contract") {
  Vocabulary vocab;
  PolicyParams<float> P(small_config(), RngState(1));
  const auto ids = toks(vocab, "Start with 3.");
  Tape<float> t;
  auto out = policy_forward_tape<float>(t, P, ids);
  REQUIRE(t.value(out.logits).shape ==
          std::vector<int>{static_cast<int>(ids.size()), P.cfg.vocab_size});
  REQUIRE(t.value(out.features).shape ==
          std::vector<int>{static_cast<int>(ids.size()), P.cfg.d_model});
}

TEST_CASE("empty context is rejected") {
  PolicyParams<float> P(small_config(), RngState(1));
  Tape<float> t;
  std::vector<int> empty;
  REQUIRE_THROWS_AS(policy_forward_tape<float>(t, P, empty), ContractError);
  REQUIRE_THROWS_AS(build_prefix(P, empty), ContractError);
}

TEST_CASE("context overflow is rejected") {
  PolicyParams<float> P(small_config(), RngState(1));
  std::vector<int> too_long(static_cast<size_t>(P.cfg.max_context) + 1, 10);
  Tape<float> t;
  REQUIRE_THROWS_AS(policy_forward_tape<float>(t, P, too_long), ContractError);

  Decoder dec(P);
  for (int i = 0; i < P.cfg.max_context; ++i) dec.step(10);
  REQUIRE_THROWS_AS(dec.step(10), ContractError);
}

TEST_CASE("with two layers the feature tap is the first block's output") {
  // Hand-stepped oracle of one pre-norm block, in double precision.
  PolicyConfig cfg;
  cfg.vocab_size = 20;
  cfg.d_model = 8;
  cfg.n_layers = 2;
  cfg.n_heads = 2;
  cfg.max_context = 16;
  PolicyParams<float> P(cfg, RngState(7));
  const std::vector<int> ids{4, 9, 13, 2};
  const int L = static_cast<int>(ids.size()), d = cfg.d_model, hd = cfg.head_dim();

  auto dval = [](float x) { return static_cast<double>(x); };
  auto& b = P.blocks[0];
  std::vector<std::vector<double>> x(static_cast<size_t>(L), std::vector<double>(d));
  for (int i = 0; i < L; ++i) {
    for (int j = 0; j < d; ++j) {
      x[i][j] = dval(P.tok_embed.value.at(ids[static_cast<size_t>(i)], j)) +
                dval(P.pos_embed.value.at(i, j));
    }
  }
  auto rms = [&](const std::vector<double>& in, const Parameter<float>& g) {
    double ms = 0;
    for (double v : in) ms += v * v;
    ms /= d;
    const double inv = 1.0 / std::sqrt(ms + static_cast<double>(kRmsEps));
    std::vector<double> out(static_cast<size_t>(d));
    for (int j = 0; j < d; ++j) out[static_cast<size_t>(j)] = in[static_cast<size_t>(j)] * inv * dval(g.value.at(j));
    return out;
  };
  auto lin = [&](const std::vector<double>& in, const Parameter<float>& w,
                 const Parameter<float>& bias, int out_dim) {
    std::vector<double> out(static_cast<size_t>(out_dim));
    for (int o = 0; o < out_dim; ++o) {
      double acc = dval(bias.value.at(o));
      for (int j = 0; j < static_cast<int>(in.size()); ++j) acc += in[static_cast<size_t>(j)] * dval(w.value.at(o, j));
      out[static_cast<size_t>(o)] = acc;
    }
    return out;
  };

  std::vector<std::vector<double>> q(static_cast<size_t>(L)), k(static_cast<size_t>(L)),
      v(static_cast<size_t>(L));
  for (int i = 0; i < L; ++i) {
    auto hn = rms(x[static_cast<size_t>(i)], b.norm1_g);
    q[static_cast<size_t>(i)] = lin(hn, b.wq, b.bq, d);
    k[static_cast<size_t>(i)] = lin(hn, b.wk, b.bk, d);
    v[static_cast<size_t>(i)] = lin(hn, b.wv, b.bv, d);
  }
  const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
  for (int i = 0; i < L; ++i) {
    std::vector<double> attn(static_cast<size_t>(d), 0.0);
    for (int h = 0; h < cfg.n_heads; ++h) {
      const int off = h * hd;
      std::vector<double> sc(static_cast<size_t>(i) + 1);
      double mx = -1e300;
      for (int j = 0; j <= i; ++j) {
        double acc = 0;
        for (int e = 0; e < hd; ++e) acc += q[static_cast<size_t>(i)][static_cast<size_t>(off + e)] * k[static_cast<size_t>(j)][static_cast<size_t>(off + e)];
        sc[static_cast<size_t>(j)] = acc * scale;
        mx = std::max(mx, sc[static_cast<size_t>(j)]);
      }
      double sum = 0;
      for (auto& s : sc) {
        s = std::exp(s - mx);
        sum += s;
      }
      for (auto& s : sc) s /= sum;
      for (int j = 0; j <= i; ++j) {
        for (int e = 0; e < hd; ++e) attn[static_cast<size_t>(off + e)] += sc[static_cast<size_t>(j)] * v[static_cast<size_t>(j)][static_cast<size_t>(off + e)];
      }
    }
    auto proj = lin(attn, b.wo, b.bo, d);
    for (int j = 0; j < d; ++j) x[static_cast<size_t>(i)][static_cast<size_t>(j)] += proj[static_cast<size_t>(j)];
    auto h2 = rms(x[static_cast<size_t>(i)], b.norm2_g);
    auto m1 = lin(h2, b.w1, b.b1, cfg.d_ff());
    for (auto& e : m1) e = std::max(0.0, e);
    auto m2 = lin(m1, b.w2, b.b2, d);
    for (int j = 0; j < d; ++j) x[static_cast<size_t>(i)][static_cast<size_t>(j)] += m2[static_cast<size_t>(j)];
  }

  Tape<float> t;
  auto out = policy_forward_tape<float>(t, P, ids);
  const auto& feats = t.value(out.features);
  for (int i = 0; i < L; ++i) {
    for (int j = 0; j < d; ++j) {
      REQUIRE(static_cast<double>(feats.at(i, j)) ==
              Catch::Approx(x[static_cast<size_t>(i)][static_cast<size_t>(j)]).margin(2e-4));
    }
  }
}

TEST_CASE("tape forward and incremental decoder agree bit for bit") {
  Vocabulary vocab;
  PolicyParams<float> P(small_config(4), RngState(3));
  const auto ids = toks(vocab, "Start with 7. Multiply by 3.");

  Tape<float> t;
  auto out = policy_forward_tape<float>(t, P, ids);
  const auto& tape_logits = t.value(out.logits);
  const auto& tape_feats = t.value(out.features);

  Decoder dec(P);
  for (size_t i = 0; i < ids.size(); ++i) {
    const auto so = dec.step(ids[i]);
    for (int j = 0; j < P.cfg.vocab_size; ++j) {
      REQUIRE(so.logits[static_cast<size_t>(j)] == tape_logits.at(static_cast<int>(i), j));
    }
    for (int j = 0; j < P.cfg.d_model; ++j) {
      REQUIRE(so.feature[static_cast<size_t>(j)] == tape_feats.at(static_cast<int>(i), j));
    }
  }
}

TEST_CASE("decoding across chained spans matches a flat pass bit for bit") {
  Vocabulary vocab;
  PolicyParams<float> P(small_config(3), RngState(9));
  const auto ids = toks(vocab, "12 + 5 = 17");

  // Flat single-span pass.
  Decoder flat(P);
  std::vector<std::vector<float>> flat_logits;
  for (int tok : ids) {
    const auto so = flat.step(tok);
    flat_logits.emplace_back(so.logits.begin(), so.logits.end());
  }

  // Split the same tokens across three chained spans.
  Decoder first(P);
  for (size_t i = 0; i < 4; ++i) first.step(ids[i]);
  const DecodeSpan s1 = std::move(first).take_span();
  Decoder second(P, &s1);
  for (size_t i = 4; i < 7; ++i) second.step(ids[i]);
  const DecodeSpan s2 = std::move(second).take_span();
  Decoder third(P, &s2);
  for (size_t i = 7; i < ids.size(); ++i) {
    const auto so = third.step(ids[i]);
    REQUIRE(std::vector<float>(so.logits.begin(), so.logits.end()) == flat_logits[i]);
  }
}

TEST_CASE("greedy thinking generation is deterministic") {
  Vocabulary vocab;
  PolicyParams<float> P(small_config(), RngState(4));
  const auto query = toks(vocab, "Start with 2. Add 3. What is the result?");
  SamplingParams sp;
  sp.temperature = 0.0f;
  sp.max_think_tokens = 12;

  const PrefixState prefix = build_prefix(P, query);
  auto a = generate_thinking_from(P, prefix, query, sp, RngState(5));
  auto b = generate_thinking_from(P, prefix, query, sp, RngState(999));  // greedy: rng unused
  REQUIRE(a.traj.think_tokens == b.traj.think_tokens);
  REQUIRE(a.traj.logprobs == b.traj.logprobs);
  REQUIRE(a.traj.think_closed == b.traj.think_closed);
}

TEST_CASE("sampled logprobs are finite and non-positive") {
  Vocabulary vocab;
  PolicyParams<float> P(small_config(), RngState(4));
  const auto query = toks(vocab, "Start with 2.");
  SamplingParams sp;
  sp.temperature = 1.0f;
  sp.max_think_tokens = 16;
  const PrefixState prefix = build_prefix(P, query);
  for (uint64_t seed = 0; seed < 4; ++seed) {
    auto cand = generate_thinking_from(P, prefix, query, sp, RngState(seed));
    for (float lp : cand.traj.logprobs) {
      REQUIRE(std::isfinite(lp));
      REQUIRE(lp <= 0.0f);
    }
    REQUIRE(cand.traj.hidden_states.rows() ==
            static_cast<int>(cand.traj.think_tokens.size()));
  }
}

TEST_CASE("zero think budget gives an empty truncated region") {
  Vocabulary vocab;
  PolicyParams<float> P(small_config(), RngState(4));
  const auto query = toks(vocab, "Start with 2.");
  SamplingParams sp;
  sp.max_think_tokens = 0;
  const PrefixState prefix = build_prefix(P, query);
  auto cand = generate_thinking_from(P, prefix, query, sp, RngState(1));
  REQUIRE(cand.traj.think_tokens.empty());
  REQUIRE(cand.traj.truncated());
}

TEST_CASE("think region never contains <think> or <end>; answers never contain think markers") {
  Vocabulary vocab;
  PolicyParams<float> P(small_config(), RngState(8));
  const auto query = toks(vocab, "Start with 9. Subtract 4. What is the result?");
  SamplingParams sp;
  sp.temperature = 1.2f;
  sp.max_think_tokens = 24;
  sp.max_answer_tokens = 8;
  const PrefixState prefix = build_prefix(P, query);
  for (uint64_t seed = 0; seed < 6; ++seed) {
    auto cand = generate_thinking_from(P, prefix, query, sp, RngState(seed));
    for (int tok : cand.traj.think_tokens) {
      REQUIRE(tok != Vocabulary::kThinkOpen);
      REQUIRE(tok != Vocabulary::kEnd);
      REQUIRE(tok != Vocabulary::kThinkClose);  // close terminates, never embedded
    }
    generate_answer_from(P, cand, sp, RngState(seed + 100));
    for (int tok : cand.traj.answer_tokens) {
      REQUIRE(tok != Vocabulary::kThinkOpen);
      REQUIRE(tok != Vocabulary::kThinkClose);
      REQUIRE(tok != Vocabulary::kEnd);  // end terminates, never embedded
    }
  }
}

TEST_CASE("teacher-forced re-scoring reproduces logprobs and features exactly") {
  Vocabulary vocab;
  PolicyParams<float> P(small_config(3), RngState(10));
  const auto query = toks(vocab, "Start with 5. Multiply by 2.");
  SamplingParams sp;
  sp.temperature = 0.9f;
  sp.max_think_tokens = 20;
  sp.max_answer_tokens = 6;
  const PrefixState prefix = build_prefix(P, query);
  for (uint64_t seed = 0; seed < 5; ++seed) {
    auto cand = generate_thinking_from(P, prefix, query, sp, RngState(seed));
    generate_answer_from(P, cand, sp, RngState(seed ^ 0xabc));
    const Trajectory& traj = cand.traj;
    REQUIRE(static_cast<int>(traj.logprobs.size()) == traj.sampled_token_count());

    const RescoreOut re = rescore_trajectory(P, traj);
    REQUIRE(re.logprobs == traj.logprobs);
    REQUIRE(re.features.data == traj.hidden_states.data);
  }
}

TEST_CASE("causality: later tokens do not affect earlier logits") {
  Vocabulary vocab;
  PolicyParams<float> P(small_config(), RngState(11));
  auto ids = toks(vocab, "Start with 4. Add 1.");
  Tape<float> t1;
  auto o1 = policy_forward_tape<float>(t1, P, ids);
  auto edited = ids;
  edited[edited.size() - 1] = 50;
  edited[edited.size() - 2] = 51;
  Tape<float> t2;
  auto o2 = policy_forward_tape<float>(t2, P, edited);
  const int unchanged = static_cast<int>(ids.size()) - 2;
  for (int i = 0; i < unchanged; ++i) {
    for (int j = 0; j < P.cfg.vocab_size; ++j) {
      REQUIRE(t1.value(o1.logits).at(i, j) == t2.value(o2.logits).at(i, j));
    }
  }
}

TEST_CASE("finite differences: two-layer policy end to end (64-bit)") {
  PolicyConfig cfg;
  cfg.vocab_size = 12;
  cfg.d_model = 8;
  cfg.n_layers = 2;
  cfg.n_heads = 2;
  cfg.max_context = 8;
  PolicyParams<double> P(cfg, RngState(21));
  const std::vector<int> ids{1, 7, 3, 11, 0};
  const std::vector<int> targets{7, 3, 11, 0, 5};

  auto build = [&](Tape<double>& t) {
    auto out = policy_forward_tape<double>(t, P, ids);
    return t.cross_entropy_mean(out.logits, targets);
  };
  // Analytic gradients.
  P.zero_grads();
  {
    Tape<double> t;
    t.backward(build(t));
  }
  std::vector<std::pair<Parameter<double>*, std::vector<double>>> analytic;
  for (auto* p : P.param_list()) analytic.emplace_back(p, p->grad.data);

  // Central finite differences on a sample of coordinates per parameter.
  const double h = 1e-5;
  RngState pick(33);
  double worst = 0.0;
  for (auto& [p, ga] : analytic) {
    const size_t n = p->value.data.size();
    for (int rep = 0; rep < 3; ++rep) {
      const size_t i = pick.below(static_cast<uint32_t>(n));
      const double saved = p->value.data[i];
      p->value.data[i] = saved + h;
      double fplus;
      {
        Tape<double> t;
        fplus = t.value(build(t)).data[0];
      }
      p->value.data[i] = saved - h;
      double fminus;
      {
        Tape<double> t;
        fminus = t.value(build(t)).data[0];
      }
      p->value.data[i] = saved;
      const double fd = (fplus - fminus) / (2 * h);
      const double an = ga[i];
      if (std::abs(fd - an) < 1e-7) continue;
      worst = std::max(worst, std::abs(fd - an) / (std::abs(fd) + std::abs(an)));
    }
  }
  REQUIRE(worst < 1e-4);
}
