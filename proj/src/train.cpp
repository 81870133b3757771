#include "cvit/train.hpp"

#include <iomanip>
#include <sstream>

#include <json.hpp>

namespace cvit {

std::string trace_to_csv(const TrainTrace& trace) {
  std::ostringstream out;
  out << "epoch,lr,train_loss,val_acc\n";
  out << std::setprecision(10);
  for (const auto& e : trace.epochs)
    out << e.epoch << ',' << e.lr << ',' << e.train_loss << ','
        << e.val_accuracy << '\n';
  return out.str();
}

std::string trace_to_json(const TrainTrace& trace) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& e : trace.epochs)
    rows.push_back({{"epoch", e.epoch},
                    {"lr", e.lr},
                    {"train_loss", e.train_loss},
                    {"val_acc", e.val_accuracy}});
  return nlohmann::json{{"epochs", rows}}.dump(2);
}

}  // namespace cvit
