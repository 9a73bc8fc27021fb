#include <string>

#include "json.hpp"
#include "qtsad/errors.hpp"
#include "qtsad/qsim.hpp"

namespace qtsad::qsim {

using nlohmann::json;

namespace {

GateKind kind_from_string(const std::string& s) {
  if (s == "RX") return GateKind::RX;
  if (s == "RY") return GateKind::RY;
  if (s == "RZ") return GateKind::RZ;
  if (s == "CNOT") return GateKind::CNOT;
  throw ParseError("circuit: unknown gate kind '" + s + "'");
}

}  // namespace

std::string program_to_text(const CircuitProgram& program) {
  json ops = json::array();
  for (const GateOp& op : program.ops) {
    json j;
    j["kind"] = to_string(op.kind);
    if (op.kind == GateKind::CNOT) {
      j["wires"] = {op.wire, op.target};
    } else {
      j["wires"] = {op.wire};
      switch (op.angle.kind) {
        case AngleSource::Kind::Constant: j["angle"] = {{"source", "constant"}, {"value", op.angle.value}}; break;
        case AngleSource::Kind::Param: j["angle"] = {{"source", "param"}, {"slot", op.angle.slot}}; break;
        case AngleSource::Kind::Input:
          j["angle"] = {{"source", "input"}, {"slot", op.angle.slot}, {"encoding", to_string(op.angle.encoding)}};
          break;
      }
    }
    ops.push_back(std::move(j));
  }
  json doc = {{"format", "qtsad-circuit"},
              {"version", kCircuitFormatVersion},
              {"n_qubits", program.n_qubits},
              {"n_param_slots", program.n_param_slots},
              {"n_input_slots", program.n_input_slots},
              {"ops", std::move(ops)}};
  return doc.dump(2) + "\n";
}

CircuitProgram program_from_text(const std::string& text) {
  CircuitProgram p;
  try {
    const json doc = json::parse(text);
    if (doc.value("format", "") != "qtsad-circuit") throw ParseError("circuit: missing format tag");
    if (doc.at("version").get<int>() != kCircuitFormatVersion) {
      throw ParseError("circuit: unsupported version " + doc.at("version").dump());
    }
    p.n_qubits = doc.at("n_qubits").get<int>();
    p.n_param_slots = doc.at("n_param_slots").get<int>();
    p.n_input_slots = doc.at("n_input_slots").get<int>();
    for (const json& j : doc.at("ops")) {
      GateOp op;
      op.kind = kind_from_string(j.at("kind").get<std::string>());
      const auto& wires = j.at("wires");
      op.wire = wires.at(0).get<int>();
      if (op.kind == GateKind::CNOT) {
        op.target = wires.at(1).get<int>();
      } else {
        const json& a = j.at("angle");
        const std::string src = a.at("source").get<std::string>();
        if (src == "constant") {
          op.angle = AngleSource::constant(a.at("value").get<double>());
        } else if (src == "param") {
          op.angle = AngleSource::param(a.at("slot").get<int>());
        } else if (src == "input") {
          op.angle = AngleSource::input(a.at("slot").get<int>(),
                                        encoding_from_string(a.at("encoding").get<std::string>()));
        } else {
          throw ParseError("circuit: unknown angle source '" + src + "'");
        }
      }
      p.ops.push_back(op);
    }
  } catch (const json::exception& e) {
    throw ParseError(std::string("circuit: ") + e.what());
  }
  p.validate();
  return p;
}

}  // namespace qtsad::qsim
