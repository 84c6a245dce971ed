#include <cmath>
#include <fstream>

#include <gtest/gtest.h>

#include "kfdaseg/error.h"
#include "kfdaseg/volume.h"
#include "kfdaseg/volume_io.h"
#include "test_support.h"

using namespace kfdaseg;
using kfdaseg::testing::random_volume;
using kfdaseg::testing::scratch_dir;

TEST(Dims, IndexIsXFastest) {
  const Dims d{4, 3, 2};
  EXPECT_EQ(d.voxel_count(), 24u);
  EXPECT_EQ(d.index(0, 0, 0), 0u);
  EXPECT_EQ(d.index(1, 0, 0), 1u);
  EXPECT_EQ(d.index(0, 1, 0), 4u);
  EXPECT_EQ(d.index(0, 0, 1), 12u);
  EXPECT_EQ(d.index(3, 2, 1), 23u);
}

TEST(Box, IntersectAndCount) {
  const Box a{{0, 0, 0}, {5, 5, 5}};
  const Box b{{3, 4, 5}, {9, 9, 9}};
  const Box c = a.intersect(b);
  EXPECT_EQ(c, (Box{{3, 4, 5}, {5, 5, 5}}));
  EXPECT_EQ(c.voxel_count(), 3u * 2u * 1u);
  const Box far{{7, 7, 7}, {8, 8, 8}};
  EXPECT_TRUE(a.intersect(far).empty());
  EXPECT_EQ(a.intersect(far).voxel_count(), 0u);
  EXPECT_TRUE(Box::whole(Dims{2, 3, 4}).inside(Dims{2, 3, 4}));
  EXPECT_FALSE((Box{{0, 0, 0}, {2, 0, 0}}).inside(Dims{2, 3, 4}));
}

TEST(MultiChannelVolume, SizeArithmetic) {
  std::vector<float> data(192, 0.5f);
  MultiChannelVolume v(Dims{4, 4, 4}, 3, data, std::vector<std::uint8_t>(64, 1));
  EXPECT_EQ(v.voxel_count(), 64u);
  EXPECT_EQ(v.channels(), 3);
  EXPECT_EQ(v.masked_count(), 64u);
}

TEST(MultiChannelVolume, PayloadSizeMismatchThrows) {
  std::vector<float> data(191, 0.5f);
  EXPECT_THROW(MultiChannelVolume(Dims{4, 4, 4}, 3, data, std::vector<std::uint8_t>(64, 1)), ValidationError);
}

TEST(MultiChannelVolume, ChannelsAreInterleaved) {
  std::vector<float> data{1, 2, 3, 4, 5, 6};
  MultiChannelVolume v(Dims{2, 1, 1}, 3, data, {1, 1});
  EXPECT_EQ(v.value(0, 2), 3.0f);
  EXPECT_EQ(v.value(1, 0), 4.0f);
  EXPECT_EQ(v.channel(1), (std::vector<double>{2.0, 5.0}));
}

TEST(LabelVolume, RejectsOutOfRangeLabels) {
  EXPECT_THROW(LabelVolume(Dims{2, 1, 1}, {1, 7}), ValidationError);
  EXPECT_THROW(LabelVolume(Dims{2, 1, 1}, {1, 0}), ValidationError);
}

TEST(LabelVolume, MaskConsistency) {
  const LabelVolume ok(Dims{3, 1, 1}, {kCsf, kBg, kWm});
  EXPECT_NO_THROW(ok.check_mask_consistent(std::vector<std::uint8_t>{1, 0, 1}));
  EXPECT_THROW(ok.check_mask_consistent(std::vector<std::uint8_t>{1, 1, 1}), ValidationError);
  EXPECT_THROW(ok.check_mask_consistent(std::vector<std::uint8_t>{0, 0, 1}), ValidationError);
}

TEST(Dice, IdentityAndDisjoint) {
  const LabelVolume a(Dims{4, 1, 1}, {kCsf, kCsf, kGm, kWm});
  const LabelVolume b(Dims{4, 1, 1}, {kGm, kGm, kCsf, kWm});
  EXPECT_DOUBLE_EQ(dice(a, a, kCsf), 1.0);
  EXPECT_DOUBLE_EQ(dice(a, b, kCsf), 0.0);
  EXPECT_DOUBLE_EQ(dice(a, b, kWm), 1.0);
  const LabelVolume c(Dims{4, 1, 1}, {kCsf, kGm, kGm, kWm});
  // |A|=2, |C|=1, overlap 1.
  EXPECT_DOUBLE_EQ(dice(a, c, kCsf), 2.0 / 3.0);
}

TEST(VolumeIo, VolumeRoundTripIsBitExact) {
  const auto dir = scratch_dir("volume_rt");
  const MultiChannelVolume v = random_volume(Dims{5, 4, 3}, 3, 11, 0.7);
  save_volume(v, dir / "vol");
  for (const char* name : {"vol", "vol.json", "vol.f32raw"}) {
    const MultiChannelVolume w = load_volume(dir / name);
    ASSERT_EQ(w.dims(), v.dims());
    ASSERT_EQ(w.channels(), v.channels());
    EXPECT_TRUE(std::equal(v.data().begin(), v.data().end(), w.data().begin()));
    EXPECT_TRUE(std::equal(v.mask().begin(), v.mask().end(), w.mask().begin()));
  }
}

TEST(VolumeIo, TruncatedPayloadThrows) {
  const auto dir = scratch_dir("volume_short");
  const MultiChannelVolume v = random_volume(Dims{4, 4, 4}, 3, 3);
  save_volume(v, dir / "vol");
  std::filesystem::resize_file(dir / "vol.f32raw", 191 * sizeof(float));
  EXPECT_THROW(load_volume(dir / "vol"), ValidationError);
}

TEST(VolumeIo, MalformedSidecarThrows) {
  const auto dir = scratch_dir("volume_bad");
  std::ofstream(dir / "vol.json") << "{ not json";
  EXPECT_THROW(load_volume(dir / "vol"), ValidationError);
  EXPECT_THROW(load_volume(dir / "missing"), ValidationError);
}

TEST(LabelIo, RoundTrips) {
  const auto dir = scratch_dir("labels_rt");
  const LabelVolume bg(Dims{3, 3, 3});
  save_labels(bg, dir / "bg");
  EXPECT_EQ(load_labels(dir / "bg"), bg);

  Rng rng(5);
  std::vector<std::uint8_t> lab(7 * 5 * 3);
  for (auto& l : lab) l = static_cast<std::uint8_t>(1 + rng.below(4));
  const LabelVolume r(Dims{7, 5, 3}, lab);
  save_labels(r, dir / "r.json");
  EXPECT_EQ(load_labels(dir / "r.u8raw"), r);
}

TEST(LabelIo, OutOfRangeByteThrows) {
  const auto dir = scratch_dir("labels_bad");
  save_labels(LabelVolume(Dims{2, 2, 1}, {1, 2, 3, 4}), dir / "l");
  {
    std::fstream f(dir / "l.u8raw", std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(2);
    f.put(7);
  }
  EXPECT_THROW(load_labels(dir / "l"), ValidationError);
}

TEST(Normalize, AffineEndpoints) {
  MultiChannelVolume v(Dims{3, 1, 1}, 2, {2, 5, 4, 5, 6, 5}, {1, 1, 1});
  const MultiChannelVolume n = normalize_intensities(v);
  EXPECT_FLOAT_EQ(n.value(0, 0), 0.0f);
  EXPECT_FLOAT_EQ(n.value(1, 0), 0.5f);
  EXPECT_FLOAT_EQ(n.value(2, 0), 1.0f);
  // Constant channel.
  for (int v2 = 0; v2 < 3; ++v2) EXPECT_EQ(n.value(v2, 1), 0.0f);
}

TEST(Normalize, RandomChannelSpansUnitIntervalAndIsIdempotent) {
  MultiChannelVolume v = random_volume(Dims{9, 8, 7}, 3, 21, 0.6);
  // Stretch the raw range so the map is not the identity.
  std::vector<float> data(v.data().begin(), v.data().end());
  for (float& x : data) x = 40.0f * x + 3.0f;
  v = MultiChannelVolume(v.dims(), 3, data, std::vector<std::uint8_t>(v.mask().begin(), v.mask().end()));
  const MultiChannelVolume n = normalize_intensities(v);
  for (int c = 0; c < 3; ++c) {
    double lo = 1e9, hi = -1e9;
    for (std::size_t i = 0; i < n.voxel_count(); ++i) {
      if (!n.masked(i)) {
        EXPECT_EQ(n.value(i, c), 0.0f);
        continue;
      }
      lo = std::min(lo, static_cast<double>(n.value(i, c)));
      hi = std::max(hi, static_cast<double>(n.value(i, c)));
    }
    EXPECT_NEAR(lo, 0.0, 1e-7);
    EXPECT_NEAR(hi, 1.0, 1e-7);
  }
  const MultiChannelVolume nn = normalize_intensities(n);
  for (std::size_t i = 0; i < n.data().size(); ++i) EXPECT_NEAR(n.data()[i], nn.data()[i], 1e-7);
  EXPECT_EQ(n.dims(), v.dims());
  EXPECT_TRUE(std::equal(n.mask().begin(), n.mask().end(), v.mask().begin()));
}

TEST(Normalize, EmptyMaskThrows) {
  MultiChannelVolume v(Dims{2, 1, 1}, 1, {1, 2}, {0, 0});
  EXPECT_THROW(normalize_intensities(v), ValidationError);
}
