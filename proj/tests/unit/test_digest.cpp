#include <catch2/catch_amalgamated.hpp>

#include "support.hpp"
#include "tumorkit/digest.hpp"

using namespace tumorkit;
using tumorkit::testing::tiny_cnn;

TEST_CASE("sha256 matches published test vectors", "[digest]") {
  CHECK(sha256_hex(std::string_view("")) == "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
  CHECK(sha256_hex(std::string_view("abc")) == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST_CASE("hex encoding is lowercase and two digits per byte", "[digest]") {
  const std::vector<std::uint8_t> b = {0x00, 0x0f, 0xa0, 0xff};
  CHECK(to_hex(b) == "000fa0ff");
}

TEST_CASE("parameter digest tracks values, names and shapes", "[digest]") {
  ClassifierModel a = ClassifierModel::baseline(tiny_cnn(32), 1);
  const ClassifierModel b = ClassifierModel::baseline(tiny_cnn(32), 1);
  CHECK(params_digest(a.params()) == params_digest(b.params()));
  CHECK(params_digest(a.params()).size() == 64);
  a.params()[0].value[0] += 1e-6f;
  CHECK(params_digest(a.params()) != params_digest(b.params()));

  nn::ParameterSet x, y;
  x.add("p", {2, 3});
  y.add("p", {3, 2});
  CHECK(params_digest(x) != params_digest(y));
  nn::ParameterSet z;
  z.add("q", {2, 3});
  CHECK(params_digest(x) != params_digest(z));
}
