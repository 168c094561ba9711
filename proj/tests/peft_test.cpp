#include "vgpeft/peft.hpp"

#include <random>

#include <gtest/gtest.h>

#include "vgpeft/error.hpp"
#include "vgpeft/model.hpp"

namespace vgp {
namespace {

PeftSpec lora_spec(std::vector<ModuleTag> placement, std::size_t rank = 16,
                   double alpha = 1.0) {
  PeftSpec s;
  s.method = PeftMethod::kLora;
  s.rank = rank;
  s.alpha = alpha;
  s.placement = std::move(placement);
  return s;
}

PeftSpec method_spec(PeftMethod m, std::vector<ModuleTag> placement) {
  PeftSpec s;
  s.method = m;
  s.placement = std::move(placement);
  return s;
}

struct Example {
  std::vector<std::size_t> ids;
  Tensor patches;
};

std::vector<Example> random_examples(const ModelConfig& cfg, std::size_t n,
                                     std::uint64_t seed) {
  std::mt19937_64 gen(seed);
  std::uniform_int_distribution<std::size_t> len(2, 6);
  std::uniform_int_distribution<std::size_t> tok(1, cfg.vocab - 1);
  std::normal_distribution<double> unit(0.0, 1.0);
  std::vector<Example> out;
  for (std::size_t i = 0; i < n; ++i) {
    Example ex;
    ex.ids.resize(len(gen));
    for (auto& id : ex.ids) id = tok(gen);
    std::vector<double> data(cfg.n_patches() * cfg.patch_dim);
    for (double& v : data) v = unit(gen);
    ex.patches = Tensor({cfg.n_patches(), cfg.patch_dim}, std::move(data));
    out.push_back(std::move(ex));
  }
  return out;
}

void randomize_trainable(GroundingModel& m, std::uint64_t seed) {
  std::mt19937_64 gen(seed);
  std::normal_distribution<double> unit(0.0, 0.3);
  for (const auto& p : m.params())
    if (p->trainable)
      for (double& v : p->tensor.data()) v = unit(gen);
}

TEST(Efficiency, FormulaAndFormatting) {
  EXPECT_DOUBLE_EQ(efficiency(0, 100), 100.0);
  EXPECT_DOUBLE_EQ(efficiency(100, 100), 0.0);
  EXPECT_DOUBLE_EQ(efficiency(25, 100), 75.0);
  EXPECT_EQ(format_efficiency(efficiency(326, 10000)), "96.74");
  EXPECT_THROW(efficiency(5, 0), ContractError);
  EXPECT_THROW(efficiency(11, 10), ContractError);
}

TEST(Lora, BudgetsPerPlacement) {
  const ModelConfig cfg;
  struct Case {
    std::vector<ModuleTag> placement;
    std::size_t expect;
  };
  const std::vector<Case> cases = {
      {{ModuleTag::kImageEncoder}, 7936},
      {{ModuleTag::kDecoder}, 14912},
      {{ModuleTag::kImageEncoder, ModuleTag::kDecoder}, 22848},
      {{ModuleTag::kTextEncoder, ModuleTag::kImageEncoder,
        ModuleTag::kDecoder},
       30016},
  };
  for (const auto& c : cases) {
    GroundingModel m = GroundingModel::build(cfg, 1);
    inject(m, lora_spec(c.placement), 2);
    EXPECT_EQ(m.trainable_coords(), c.expect);
    EXPECT_EQ(m.total_coords(), 38468u + c.expect);
    for (const auto& p : m.params())
      if (p->trainable)
        EXPECT_NE(p->path.find("lora_"), std::string::npos) << p->path;
      else
        EXPECT_EQ(p->path.find("lora_"), std::string::npos) << p->path;
  }
}

TEST(Lora, TransparentAtInjection) {
  const ModelConfig cfg;
  GroundingModel m = GroundingModel::build(cfg, 7);
  const auto examples = random_examples(cfg, 5, 70);
  std::vector<std::vector<double>> before;
  for (const auto& ex : examples)
    before.push_back(m.forward_box(ex.ids, ex.patches).data());

  inject(m, lora_spec(all_module_tags(), 4), 8);
  for (std::size_t i = 0; i < examples.size(); ++i)
    EXPECT_EQ(m.forward_box(examples[i].ids, examples[i].patches).data(),
              before[i])
        << "example " << i;  // bit-for-bit
}

TEST(Lora, DownProjectionStartsAtZeroUpDoesNot) {
  GroundingModel m = GroundingModel::build(ModelConfig{}, 7);
  inject(m, lora_spec({ModuleTag::kDecoder}, 4), 8);
  const auto& down =
      m.param("decoder.block0.attn.q.lora_down.weight").tensor;
  for (double v : down.data()) EXPECT_EQ(v, 0.0);
  const auto& up = m.param("decoder.block0.attn.q.lora_up.weight").tensor;
  EXPECT_EQ(up.shape(), (std::vector<std::size_t>{4, 32}));
  double sq = 0.0;
  for (double v : up.data()) sq += v * v;
  EXPECT_GT(sq, 0.0);
}

TEST(Adapter, IdentityAtInjectionAndBudget) {
  const ModelConfig cfg;
  GroundingModel m = GroundingModel::build(cfg, 9);
  const auto examples = random_examples(cfg, 5, 90);
  std::vector<std::vector<double>> before;
  for (const auto& ex : examples)
    before.push_back(m.forward_box(ex.ids, ex.patches).data());

  inject(m, method_spec(PeftMethod::kAdapter, all_module_tags()), 10);
  // d/4 bottleneck: (32*8+8) + (8*32+32) = 552 per adapter, two per block.
  EXPECT_EQ(m.trainable_coords(), 4u * 1104u);
  EXPECT_EQ(m.peft()->bottleneck, 8u);
  EXPECT_EQ(m.param("decoder.block0.attn_adapter.down.weight").tensor.shape(),
            (std::vector<std::size_t>{32, 8}));

  for (std::size_t i = 0; i < examples.size(); ++i)
    EXPECT_EQ(m.forward_box(examples[i].ids, examples[i].patches).data(),
              before[i])
        << "example " << i;
}

TEST(Bitfit, UnfreezesOnlyPlacedBiases) {
  const ModelConfig cfg;
  struct Case {
    std::vector<ModuleTag> placement;
    std::size_t expect;
  };
  // Per block: 4 attention biases (128), ffn biases (96), two norm shifts
  // (64). The image tower adds the patch projection bias, the decoder the
  // box head bias.
  const std::vector<Case> cases = {
      {{ModuleTag::kTextEncoder}, 288},
      {{ModuleTag::kImageEncoder}, 320},
      {{ModuleTag::kDecoder}, 580},
      {all_module_tags(), 1188},
  };
  for (const auto& c : cases) {
    GroundingModel m = GroundingModel::build(cfg, 1);
    const std::size_t params_before = m.params().size();
    inject(m, method_spec(PeftMethod::kBitfit, c.placement), 2);
    EXPECT_EQ(m.params().size(), params_before);  // nothing new
    EXPECT_EQ(m.total_coords(), 38468u);
    EXPECT_EQ(m.trainable_coords(), c.expect);
    for (const auto& p : m.params())
      if (p->trainable) EXPECT_EQ(p->kind, ParamKind::kBias) << p->path;
  }
}

TEST(Inject, SecondAdaptationIsRejected) {
  GroundingModel m = GroundingModel::build(ModelConfig{}, 1);
  inject(m, lora_spec({ModuleTag::kDecoder}), 2);
  EXPECT_THROW(inject(m, method_spec(PeftMethod::kBitfit, all_module_tags()), 3),
               StateError);
}

TEST(Inject, SpecValidation) {
  GroundingModel m = GroundingModel::build(ModelConfig{}, 1);
  PeftSpec empty;
  empty.placement = {};
  EXPECT_THROW(inject(m, empty, 2), ConfigError);

  PeftSpec dup = lora_spec({ModuleTag::kDecoder, ModuleTag::kDecoder});
  EXPECT_THROW(inject(m, dup, 2), ConfigError);

  PeftSpec r0 = lora_spec({ModuleTag::kDecoder}, 0);
  EXPECT_THROW(inject(m, r0, 2), ConfigError);

  PeftSpec bad_alpha = lora_spec({ModuleTag::kDecoder}, 4, -1.0);
  EXPECT_THROW(inject(m, bad_alpha, 2), ConfigError);
}

TEST(Merge, FoldsBranchesIntoBaseWeights) {
  const ModelConfig cfg;
  for (double alpha : {1.0, 0.5}) {
    GroundingModel m = GroundingModel::build(cfg, 11);
    inject(m, lora_spec(all_module_tags(), 4, alpha), 12);
    randomize_trainable(m, 13);

    const auto examples = random_examples(cfg, 6, 130);
    std::vector<std::vector<double>> adapted;
    for (const auto& ex : examples)
      adapted.push_back(m.forward_box(ex.ids, ex.patches).data());

    merge_lora(m);
    EXPECT_FALSE(m.peft().has_value());
    EXPECT_EQ(m.total_coords(), 38468u);
    for (const auto& p : m.params())
      EXPECT_EQ(p->path.find("lora_"), std::string::npos) << p->path;

    for (std::size_t i = 0; i < examples.size(); ++i) {
      const auto merged =
          m.forward_box(examples[i].ids, examples[i].patches).data();
      for (std::size_t k = 0; k < 4; ++k)
        EXPECT_NEAR(merged[k], adapted[i][k], 1e-9)
            << "alpha " << alpha << " example " << i;
    }
  }
}

TEST(Merge, RequiresLowRankBranches) {
  GroundingModel plain = GroundingModel::build(ModelConfig{}, 1);
  EXPECT_THROW(merge_lora(plain), StateError);

  GroundingModel bitfit = GroundingModel::build(ModelConfig{}, 1);
  inject(bitfit, method_spec(PeftMethod::kBitfit, all_module_tags()), 2);
  EXPECT_THROW(merge_lora(bitfit), StateError);
}

TEST(Sweep, WiderPlacementNeverRaisesEfficiency) {
  const std::vector<std::vector<ModuleTag>> chain = {
      {ModuleTag::kImageEncoder},
      {ModuleTag::kImageEncoder, ModuleTag::kDecoder},
      all_module_tags(),
  };
  for (PeftMethod method :
       {PeftMethod::kLora, PeftMethod::kAdapter, PeftMethod::kBitfit}) {
    PeftSpec base = method_spec(method, {});
    const auto pts = placement_sweep(ModelConfig{}, base, chain, 1);
    ASSERT_EQ(pts.size(), 3u);
    for (std::size_t i = 1; i < pts.size(); ++i) {
      EXPECT_GE(pts[i].trainable, pts[i - 1].trainable);
      EXPECT_LE(pts[i].efficiency_pct, pts[i - 1].efficiency_pct)
          << to_string(method) << " step " << i;
    }
  }
  EXPECT_THROW(placement_sweep(ModelConfig{}, lora_spec(all_module_tags()),
                               {}, 1),
               ConfigError);
}

TEST(Report, CountsAndRendering) {
  GroundingModel m = GroundingModel::build(ModelConfig{}, 1);
  inject(m, lora_spec({ModuleTag::kDecoder}), 2);
  const ParamReport r = param_report(m);
  EXPECT_EQ(r.total, 38468u + 14912u);
  EXPECT_EQ(r.trainable, 14912u);
  EXPECT_EQ(r.rows.size(), m.params().size());
  EXPECT_DOUBLE_EQ(r.efficiency_pct, efficiency(r.trainable, r.total));

  const std::string table = to_table(r);
  EXPECT_NE(table.find("decoder.box_head.lora_up.weight"), std::string::npos);
  EXPECT_NE(table.find("trainable"), std::string::npos);
  EXPECT_NE(table.find("efficiency"), std::string::npos);

  const std::string json = to_json(r);
  EXPECT_NE(json.find("\"total\":53380"), std::string::npos);
  EXPECT_NE(json.find("\"trainable\":14912"), std::string::npos);
}

}  // namespace
}  // namespace vgp
