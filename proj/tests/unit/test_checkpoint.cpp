#include <doctest.h>

#include <fstream>

#include "moext/checkpoint.hpp"
#include "moext/errors.hpp"
#include "moext/model.hpp"
#include "support.hpp"

using namespace moext;
using namespace moext::train;
using testing::random_tensor;

namespace {

nn::ModelConfig tiny() {
  auto cfg = nn::ModelConfig::reduced(16);
  cfg.image_size = 32;
  cfg.num_classes = 3;
  return cfg;
}

Checkpoint make(Phase phase, const nn::MoExtNet<float>& net, const nn::ModelConfig& cfg) {
  Checkpoint c;
  c.phase = phase;
  c.model = cfg;
  c.train_config = {{"epochs", 3}, {"lr", 1e-3}};
  c.seed = 42;
  c.epoch = 3;
  c.history = {{1, 0.5, 0.1, 0.2, 0.8, 0, 0}, {2, 0.25, 0.05, 0.1, 0.4, 0, 0}};
  c.state = net.state_dict();
  return c;
}

}  // namespace

TEST_CASE("round trip reproduces the network outputs exactly") {
  const auto cfg = tiny();
  nn::MoExtNet<float> net(cfg, nn::NetParts::all());
  net.init(5);
  const auto ckpt = make(Phase::Finetune, net, cfg);
  testing::TempDir dir("ckpt");
  save_checkpoint(ckpt, dir / "a.ckpt");
  const auto back = load_checkpoint(dir / "a.ckpt");
  CHECK(back == ckpt);

  nn::MoExtNet<float> twin(back.model, nn::NetParts::all());
  twin.init(99);
  const auto report = twin.load_state_dict(back.state);
  CHECK(report.ignored.empty());
  CHECK(report.missing.empty());
  Rng rng(1);
  const auto on = random_tensor<float>({2, 3, 32, 32}, rng, 0, 1);
  const auto ap = random_tensor<float>({2, 3, 32, 32}, rng, 0, 1);
  CHECK(net.forward_classify(on, ap, nn::Mode::Eval).vec() == twin.forward_classify(on, ap, nn::Mode::Eval).vec());
  CHECK(serialize_checkpoint(back) == serialize_checkpoint(ckpt));
}

TEST_CASE("damaged archives") {
  const auto cfg = tiny();
  nn::MoExtNet<float> net(cfg, nn::NetParts::pretrain());
  net.init(6);
  const auto bytes = serialize_checkpoint(make(Phase::Pretrain, net, cfg));

  SUBCASE("truncated") {
    for (std::size_t keep : {std::size_t{0}, std::size_t{7}, std::size_t{20}, bytes.size() / 2, bytes.size() - 1}) {
      std::vector<std::uint8_t> cut(bytes.begin(), bytes.begin() + static_cast<std::ptrdiff_t>(keep));
      CHECK_THROWS_AS(deserialize_checkpoint(cut), CorruptArchiveError);
    }
  }
  SUBCASE("flipped payload byte") {
    auto bad = bytes;
    bad[bad.size() / 2] ^= 0x10;
    CHECK_THROWS_AS(deserialize_checkpoint(bad), CorruptArchiveError);
  }
  SUBCASE("bad magic") {
    auto bad = bytes;
    bad[0] = 'X';
    CHECK_THROWS_AS(deserialize_checkpoint(bad), CorruptArchiveError);
  }
  SUBCASE("other version") {
    auto bad = bytes;
    bad[8] = static_cast<std::uint8_t>(kCheckpointVersion + 1);
    // keep the checksum valid so only the version is wrong
    const std::size_t body = bad.size() - 8;
    const std::uint64_t h = fnv1a(bad.data(), body);
    for (int k = 0; k < 8; ++k) bad[body + static_cast<std::size_t>(k)] = static_cast<std::uint8_t>(h >> (8 * k));
    CHECK_THROWS_AS(deserialize_checkpoint(bad), VersionError);
  }
  SUBCASE("missing file") {
    CHECK_THROWS_AS(load_checkpoint("/nonexistent/x.ckpt"), IoError);
  }
}

TEST_CASE("pretrain checkpoint into the finetune network") {
  const auto cfg = tiny();
  nn::MoExtNet<float> pre(cfg, nn::NetParts::pretrain());
  pre.init(7);
  nn::MoExtNet<float> fine(cfg, nn::NetParts::finetune());
  fine.init(8);
  const auto report = fine.load_state_dict(pre.state_dict());
  bool texture_ignored = false;
  for (const auto& n : report.ignored) {
    CHECK(n.rfind("backbone", 0) != 0);
    CHECK(n.rfind("shape_branch", 0) != 0);
    texture_ignored |= n.rfind("texture_branch", 0) == 0;
  }
  CHECK(texture_ignored);
  for (const auto& n : report.missing) CHECK(n.rfind("classifier", 0) == 0);
  const auto fs = fine.state_dict();
  const auto ps = pre.state_dict();
  for (const auto& [name, arr] : fs)
    if (name.rfind("backbone", 0) == 0 || name.rfind("shape_branch", 0) == 0 || name.rfind("motion", 0) == 0)
      CHECK(arr == ps.at(name));
}

TEST_CASE("fnv1a reference values") {
  CHECK(fnv1a(nullptr, 0) == 0xcbf29ce484222325ULL);
  const std::uint8_t a[] = {'a'};
  CHECK(fnv1a(a, 1) == 0xaf63dc4c8601ec8cULL);
  const std::string foobar = "foobar";
  CHECK(fnv1a(reinterpret_cast<const std::uint8_t*>(foobar.data()), foobar.size()) == 0x85944171f73967e8ULL);
}
