#include "glad/checkpoint.hpp"

#include <map>

#include "binary_io.hpp"
#include "glad/error.hpp"

namespace glad {

namespace {

constexpr char kMagic[4] = {'G', 'L', 'A', 'D'};
constexpr std::uint32_t kVersion = 1;

struct Record {
  std::string name;
  DType dtype = DType::f32;
  Shape shape;
  std::vector<float> values;
};

void write_record(binio::Writer& w, const std::string& name, const Shape& shape, std::span<const float> values) {
  w.u16(static_cast<std::uint16_t>(name.size()));
  w.bytes(name);
  w.u8(static_cast<std::uint8_t>(DType::f32));
  w.u8(static_cast<std::uint8_t>(shape.size()));
  for (auto d : shape) w.u32(static_cast<std::uint32_t>(d));
  for (float v : values) w.f32(v);
}

struct Decoded {
  RunConfig config;
  KeyValues state;
  std::vector<Record> records;
};

Decoded decode(const std::string& bytes) {
  binio::Reader r(bytes, "checkpoint");
  if (r.bytes(4) != std::string_view(kMagic, 4)) throw FormatError("checkpoint: bad magic at offset 0");
  const auto version = r.u32();
  if (version != kVersion) {
    throw FormatError("checkpoint: unsupported version " + std::to_string(version) + " at offset 4");
  }
  const auto text_len = r.u32();
  KeyValues all;
  try {
    all = parse_key_values(r.bytes(text_len));
  } catch (const ConfigError& e) {
    r.fail(std::string("malformed config text (") + e.what() + ")");
  }
  Decoded d;
  KeyValues cfg;
  for (auto& [k, v] : all) (k.starts_with("state.") ? d.state : cfg)[k] = v;
  try {
    d.config = apply_key_values(RunConfig{}, cfg);
  } catch (const ConfigError& e) {
    r.fail(std::string("invalid config (") + e.what() + ")");
  }
  const auto count = r.u32();
  for (std::uint32_t i = 0; i < count; ++i) {
    Record rec;
    const auto name_len = r.u16();
    rec.name = std::string(r.bytes(name_len));
    const auto dtype = r.u8();
    if (dtype != static_cast<std::uint8_t>(DType::f32)) r.fail("unsupported dtype " + std::to_string(dtype));
    const auto ndim = r.u8();
    for (int k = 0; k < ndim; ++k) rec.shape.push_back(r.u32());
    rec.values.resize(shape_numel(rec.shape));
    for (auto& v : rec.values) v = r.f32();
    d.records.push_back(std::move(rec));
  }
  if (!r.done()) r.fail("trailing bytes after last record");
  return d;
}

std::uint64_t state_u64(const KeyValues& kv, const std::string& key) {
  auto it = kv.find(key);
  if (it == kv.end()) throw FormatError("checkpoint: missing " + key);
  try {
    return std::stoull(it->second);
  } catch (const std::exception&) {
    throw FormatError("checkpoint: bad value for " + key);
  }
}

void restore(Trainer<float>& trainer, const Decoded& d, bool with_optimizer) {
  std::map<std::string, const Record*> by_name;
  for (const auto& rec : d.records) by_name[rec.name] = &rec;
  auto take = [&](const std::string& name, const Shape& shape) -> const Record& {
    auto it = by_name.find(name);
    if (it == by_name.end()) throw FormatError("checkpoint: missing record " + name);
    if (it->second->shape != shape) {
      throw FormatError("checkpoint: record " + name + " has shape " + shape_str(it->second->shape) +
                        ", model expects " + shape_str(shape));
    }
    return *it->second;
  };
  std::size_t used = 0;
  for (auto& [name, t] : trainer.model().named_parameters()) {
    const auto& rec = take("param." + name, t.shape());
    auto dst = t.mutable_data();
    std::copy(rec.values.begin(), rec.values.end(), dst.begin());
    ++used;
  }
  auto named = trainer.trainable_named();
  auto& opt = trainer.optimizer();
  if (with_optimizer) {
    opt.m.assign(named.size(), {});
    opt.v.assign(named.size(), {});
    opt.t.assign(named.size(), 0);
    for (std::size_t i = 0; i < named.size(); ++i) {
      const auto& name = named[i].first;
      const auto key = "state.adam_t." + name;
      if (d.state.count(key) == 0) continue;
      opt.t[i] = state_u64(d.state, key);
      opt.m[i] = take("adam.m." + name, named[i].second.shape()).values;
      opt.v[i] = take("adam.v." + name, named[i].second.shape()).values;
      used += 2;
    }
    trainer.set_steps_done(state_u64(d.state, "state.step"));
  } else {
    for (const auto& rec : d.records) used += rec.name.starts_with("adam.") ? 1 : 0;
  }
  if (used != d.records.size()) throw FormatError("checkpoint: records that match no model tensor");
}

}  // namespace

std::string encode_checkpoint(const Trainer<float>& trainer) {
  KeyValues kv = to_key_values(trainer.config());
  kv["state.step"] = std::to_string(trainer.steps_done());
  const auto named = trainer.trainable_named();
  const auto& opt = trainer.optimizer();
  for (std::size_t i = 0; i < named.size() && i < opt.t.size(); ++i) {
    if (opt.t[i] > 0) kv["state.adam_t." + named[i].first] = std::to_string(opt.t[i]);
  }
  const std::string text = format_key_values(kv);

  std::vector<std::pair<std::string, std::pair<Shape, std::span<const float>>>> recs;
  for (const auto& [name, t] : trainer.model().named_parameters()) {
    recs.push_back({"param." + name, {t.shape(), t.data()}});
  }
  for (std::size_t i = 0; i < named.size() && i < opt.t.size(); ++i) {
    if (opt.t[i] == 0) continue;
    recs.push_back({"adam.m." + named[i].first, {named[i].second.shape(), opt.m[i]}});
    recs.push_back({"adam.v." + named[i].first, {named[i].second.shape(), opt.v[i]}});
  }

  binio::Writer w;
  w.bytes(std::string_view(kMagic, 4));
  w.u32(kVersion);
  w.u32(static_cast<std::uint32_t>(text.size()));
  w.bytes(text);
  w.u32(static_cast<std::uint32_t>(recs.size()));
  for (const auto& [name, body] : recs) write_record(w, name, body.first, body.second);
  return w.buffer();
}

void save_checkpoint(const Trainer<float>& trainer, const std::string& path) {
  binio::write_file(path, encode_checkpoint(trainer));
}

Trainer<float> decode_trainer(const std::string& bytes) {
  const auto d = decode(bytes);
  Trainer<float> trainer(d.config);
  restore(trainer, d, true);
  return trainer;
}

Trainer<float> load_trainer(const std::string& path) { return decode_trainer(binio::read_file(path)); }

GladModel<float> load_model(const std::string& path, RunConfig* config_out) {
  const auto d = decode(binio::read_file(path));
  Trainer<float> trainer(d.config);
  restore(trainer, d, false);
  if (config_out) *config_out = d.config;
  return trainer.model();
}

LoadedCheckpoint read_checkpoint_header(const std::string& path) {
  const auto d = decode(binio::read_file(path));
  return {d.config, state_u64(d.state, "state.step")};
}

}  // namespace glad
