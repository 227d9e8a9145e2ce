#include <gtest/gtest.h>

#include <filesystem>

#include "mason/encoder.hpp"

using namespace mason;

namespace {

Tensor<float> random_image(std::uint64_t seed, std::size_t c, std::size_t h,
                           std::size_t w) {
  Tensor<float> img({c, h, w});
  RngStream rng = make_stream(seed, "img");
  for (auto& v : img.vec()) v = float(rng.uniform());
  return img;
}

}  // namespace

TEST(Encoder, SharedWeightDeterminism) {
  Encoder enc = Encoder::create(EncoderSpec{});
  auto img = random_image(1, 3, 128, 128);
  FeatureSet a = enc.extract(img);
  FeatureSet b = enc.extract(img);
  ASSERT_EQ(a.levels.size(), b.levels.size());
  for (std::size_t l = 0; l < a.levels.size(); ++l)
    EXPECT_TRUE(a.levels[l] == b.levels[l]);  // bitwise-equal
}

TEST(Encoder, DeskCnnStrideTable) {
  Encoder enc = Encoder::create(EncoderSpec{});
  FeatureSet fs = enc.extract(random_image(2, 3, 256, 256));
  ASSERT_EQ(fs.levels.size(), 4u);
  const std::size_t expect[4] = {64, 32, 16, 16};
  for (std::size_t l = 0; l < 4; ++l) {
    EXPECT_EQ(fs.levels[l].dim(1), expect[l]);
    EXPECT_EQ(fs.levels[l].dim(2), expect[l]);
  }
}

TEST(Encoder, ViTKeepsConstantResolution) {
  EncoderSpec spec;
  spec.adapter = "vit";
  Encoder enc = Encoder::create(spec);
  FeatureSet fs = enc.extract(random_image(3, 3, 256, 256));
  ASSERT_EQ(fs.levels.size(), 4u);
  for (const auto& lv : fs.levels) {
    EXPECT_EQ(lv.dim(1), 16u);
    EXPECT_EQ(lv.dim(2), 16u);
  }
}

TEST(Encoder, ListLevelsMetadata) {
  Encoder enc = Encoder::create(EncoderSpec{});
  auto metas = enc.list_levels();
  ASSERT_EQ(metas.size(), 4u);
  const std::size_t strides[4] = {4, 8, 16, 16};
  const std::size_t chans[4] = {16, 32, 64, 64};
  for (std::size_t l = 0; l < 4; ++l) {
    EXPECT_EQ(metas[l].layer_id, int(l + 1));
    EXPECT_EQ(metas[l].stride, strides[l]);
    EXPECT_EQ(metas[l].channels, chans[l]);
  }
}

TEST(Encoder, MetadataConsistentWithForwardPass) {
  Encoder enc = Encoder::create(EncoderSpec{});
  const std::size_t S = 128;
  FeatureSet fs = enc.extract(random_image(4, 3, S, S));
  auto metas = enc.list_levels();
  for (std::size_t l = 0; l < metas.size(); ++l) {
    EXPECT_EQ(fs.levels[l].dim(0), metas[l].channels);
    EXPECT_EQ(fs.levels[l].dim(1), S / metas[l].stride);
    EXPECT_EQ(fs.levels[l].dim(2), S / metas[l].stride);
  }
}

TEST(Encoder, UnknownLayerRejected) {
  EncoderSpec spec;
  spec.layer_ids = {1, 2, 9};
  try {
    Encoder::create(spec);
    FAIL() << "expected unknown-layer error";
  } catch (const Error& e) {
    EXPECT_EQ(e.error_class(), ErrorClass::unknown_layer);
  }
}

TEST(Encoder, UnknownAdapterRejected) {
  EncoderSpec spec;
  spec.adapter = "resnet500";
  try {
    Encoder::create(spec);
    FAIL() << "expected unknown-adapter error";
  } catch (const Error& e) {
    EXPECT_EQ(e.error_class(), ErrorClass::unknown_adapter);
  }
}

TEST(Encoder, ChannelMismatchRejected) {
  Encoder enc = Encoder::create(EncoderSpec{});
  EXPECT_THROW(enc.extract(random_image(5, 4, 128, 128)), Error);
}

TEST(Encoder, NonDivisibleInputRejected) {
  Encoder enc = Encoder::create(EncoderSpec{});
  EXPECT_THROW(enc.extract(random_image(6, 3, 100, 100)), Error);
}

TEST(Encoder, TranslationCovarianceInterior) {
  // shifting the input by one stride shifts that level's features by one
  // cell away from the boundary
  Encoder enc = Encoder::create(EncoderSpec{});
  const std::size_t S = 256;
  auto img = random_image(7, 3, S, S);
  auto metas = enc.list_levels();
  FeatureSet base = enc.extract(img);
  for (std::size_t l = 0; l < metas.size(); ++l) {
    const std::size_t stride = metas[l].stride;
    Tensor<float> shifted({3, S, S});
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t y = 0; y < S; ++y)
        for (std::size_t x = 0; x < S; ++x)
          shifted.at(c, y, x) = y >= stride ? img.at(c, y - stride, x) : 0.f;
    FeatureSet moved = enc.extract(shifted);
    const auto& f0 = base.levels[l];
    const auto& f1 = moved.levels[l];
    const std::size_t fh = f0.dim(1), fw = f0.dim(2);
    const std::size_t margin = 6;  // receptive-field halo in cells
    ASSERT_GT(fh, 2 * margin);
    double max_err = 0;
    for (std::size_t c = 0; c < f0.dim(0); ++c)
      for (std::size_t y = margin; y < fh - margin; ++y)
        for (std::size_t x = margin; x < fw - margin; ++x)
          max_err = std::max(
              max_err, double(std::abs(f1.at(c, y, x) - f0.at(c, y - 1, x))));
    EXPECT_LT(max_err, 1e-5) << "level " << l;
  }
}

TEST(Encoder, WeightHashStableAndSeedSensitive) {
  EncoderSpec spec;
  Encoder a = Encoder::create(spec);
  Encoder b = Encoder::create(spec);
  EXPECT_EQ(a.weight_hash(), b.weight_hash());
  spec.weight_seed = 8;
  Encoder c = Encoder::create(spec);
  EXPECT_NE(a.weight_hash(), c.weight_hash());
}

TEST(Encoder, ExternalCheckpointRoundTrip) {
  namespace fs = std::filesystem;
  const fs::path path = fs::temp_directory_path() / "mason_enc_weights.msnt";
  EncoderSpec spec;
  spec.weight_seed = 99;
  Encoder original = Encoder::create(spec);
  original.save_weights(path);

  EncoderSpec ext;
  ext.weight_source = WeightSource::external_checkpoint;
  ext.checkpoint_path = path.string();
  ext.weight_seed = 1;  // must be ignored when loading external weights
  Encoder loaded = Encoder::create(ext);
  EXPECT_EQ(original.weight_hash(), loaded.weight_hash());
  auto img = random_image(8, 3, 128, 128);
  FeatureSet a = original.extract(img);
  FeatureSet b = loaded.extract(img);
  for (std::size_t l = 0; l < a.levels.size(); ++l)
    EXPECT_TRUE(a.levels[l] == b.levels[l]);
}

TEST(Encoder, ExternalCheckpointShapeValidation) {
  namespace fs = std::filesystem;
  const fs::path path = fs::temp_directory_path() / "mason_enc_bad.msnt";
  // a desk_cnn checkpoint fed to the vit adapter must fail cleanly
  Encoder desk = Encoder::create(EncoderSpec{});
  desk.save_weights(path);
  EncoderSpec ext;
  ext.adapter = "vit";
  ext.weight_source = WeightSource::external_checkpoint;
  ext.checkpoint_path = path.string();
  EXPECT_THROW(Encoder::create(ext), Error);
}

TEST(Encoder, ViTExternalCheckpointRoundTrip) {
  namespace fs = std::filesystem;
  const fs::path path = fs::temp_directory_path() / "mason_vit_weights.msnt";
  EncoderSpec spec;
  spec.adapter = "vit";
  spec.weight_seed = 123;
  Encoder original = Encoder::create(spec);
  original.save_weights(path);
  EncoderSpec ext = spec;
  ext.weight_source = WeightSource::external_checkpoint;
  ext.checkpoint_path = path.string();
  Encoder loaded = Encoder::create(ext);
  auto img = random_image(9, 3, 64, 64);
  FeatureSet a = original.extract(img);
  FeatureSet b = loaded.extract(img);
  for (std::size_t l = 0; l < a.levels.size(); ++l)
    EXPECT_TRUE(a.levels[l] == b.levels[l]);
}

TEST(Encoder, NormalizationConstantsApplied) {
  EncoderSpec plain;
  EncoderSpec normed = plain;
  normed.norm_mean = {0.5f, 0.5f, 0.5f};
  normed.norm_std = {0.25f, 0.25f, 0.25f};
  Encoder a = Encoder::create(plain);
  Encoder b = Encoder::create(normed);
  auto img = random_image(10, 3, 64, 64);
  // normalizing the input by hand must equal the adapter's normalization
  Tensor<float> pre = img;
  for (auto& v : pre.vec()) v = (v - 0.5f) / 0.25f;
  FeatureSet want = a.extract(pre);
  FeatureSet got = b.extract(img);
  for (std::size_t l = 0; l < want.levels.size(); ++l)
    EXPECT_TRUE(want.levels[l] == got.levels[l]);
}

TEST(Encoder, LayerSubsetSelection) {
  EncoderSpec spec;
  spec.layer_ids = {2, 4};
  Encoder enc = Encoder::create(spec);
  FeatureSet fs = enc.extract(random_image(11, 3, 128, 128));
  ASSERT_EQ(fs.levels.size(), 2u);
  EXPECT_EQ(fs.layer_ids[0], 2);
  EXPECT_EQ(fs.layer_ids[1], 4);
  EXPECT_EQ(fs.levels[0].dim(0), 32u);
  EXPECT_EQ(fs.levels[1].dim(0), 64u);
}
