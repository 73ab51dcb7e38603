#pragma once

// Generated by tools/embed_vocab.py from data/. Edit the data files and rerun.

#include <string_view>

namespace anameta::builtin {

inline constexpr std::string_view kBuiltinMeasureTypes = R"VOCAB([
  {"name": "Count", "category": "Dimensionless", "units": [], "examples": ["population", "daily passenger flow", "quantity", "number of employees"]},
  {"name": "Ratio", "category": "Dimensionless", "units": [], "examples": ["percentage", "change rate", "proportion", "share"]},
  {"name": "Angle", "category": "Dimensionless", "units": [], "examples": ["angle", "longitude", "latitude"]},
  {"name": "Factor", "category": "Dimensionless", "units": [], "examples": ["coefficient of thermal expansion", "drag coefficient"]},
  {"name": "Score", "category": "Dimensionless", "units": [], "examples": ["rating", "exam score", "index"]},
  {"name": "Rank", "category": "Dimensionless", "units": [], "examples": ["university ranking", "gdp ranking"]},
  {"name": "Money", "category": "Money", "units": ["$", "US$", "€", "£", "¥", "₹", "USD", "EUR", "GBP", "JPY", "CNY", "INR"], "examples": ["sales", "asset", "income", "revenue", "cost", "gdp", "price"]},
  {"name": "DataSize", "category": "DataFileSize", "units": ["KB", "MB", "GB", "TB", "PB", "bytes"], "examples": ["memory size", "disk size"]},
  {"name": "Duration", "category": "Time", "units": ["s", "sec", "secs", "seconds", "ms", "min", "mins", "minutes", "hr", "hrs", "h", "hours", "d", "days", "wk", "weeks", "months", "yr", "yrs", "years"], "examples": ["age", "runtime", "time length"]},
  {"name": "Frequency", "category": "Time", "units": ["Hz", "kHz", "MHz", "GHz", "RPM"], "examples": ["audio frequency", "rotational speed"]},
  {"name": "Length", "category": "Scientific", "units": ["m", "cm", "mm", "km", "meters", "metres", "yd", "yard", "yards", "ft", "feet", "inches", "mi", "miles"], "examples": ["length", "width", "elevation", "depth", "height"]},
  {"name": "Area", "category": "Scientific", "units": ["m²", "m2", "km²", "km2", "ft²", "sq ft", "sq mi", "acre", "acres", "ha", "hectares"], "examples": ["surface area", "gross floor area"]},
  {"name": "Volume", "category": "Scientific", "units": ["m³", "m3", "L", "ml", "liters", "litres", "gal", "gallons"], "examples": ["vital capacity", "water capacity"]},
  {"name": "Mass", "category": "Scientific", "units": ["kg", "g", "mg", "lb", "lbs", "oz", "tons", "tonnes"], "examples": ["body weight", "salt consumption"]},
  {"name": "Power", "category": "Scientific", "units": ["W", "kW", "MW", "GW", "hp"], "examples": ["source power", "rated power"]},
  {"name": "Energy", "category": "Scientific", "units": ["J", "kJ", "MJ", "cal", "kcal", "Wh", "kWh", "BTU"], "examples": ["calories", "energy consumption"]},
  {"name": "Pressure", "category": "Scientific", "units": ["Pa", "kPa", "hPa", "MPa", "mmHg", "bar", "psi", "atm"], "examples": ["atmospheric pressure", "blood pressure"]},
  {"name": "Speed", "category": "Scientific", "units": ["m/s", "km/h", "mph", "kph", "knots"], "examples": ["velocity", "average speed"]},
  {"name": "Temperature", "category": "Scientific", "units": ["°C", "°F", "℃", "℉", "K"], "examples": ["effective temperature", "melting point", "boiling point"]},
  {"name": "Others", "category": "Others", "units": [], "examples": []}
]
)VOCAB";

inline constexpr std::string_view kBuiltinDimensionTypes = R"VOCAB(people.person
location.location
organization.organization
sports.sports_team
sports.pro_athlete
soccer.football_team
time.event
location.country
location.citytown
government.political_party
location.administrative_division
sports.sports_league_season
soccer.football_player
sports.sports_league
government.politician
film.film
business.business_operation
)VOCAB";

inline constexpr std::string_view kBuiltinAggFunctions = R"VOCAB(SUM
AVERAGE
COUNT
MAX
MIN
MEDIAN
PRODUCT
STDDEV
VAR
)VOCAB";

inline constexpr std::string_view kBuiltinPropertyMap = R"VOCAB({
  "dbo:populationTotal": "Count",
  "dbo:population": "Count",
  "dbo:numberOfEmployees": "Count",
  "dbo:numberOfStudents": "Count",
  "dbo:percentage": "Ratio",
  "dbo:latitude": "Angle",
  "dbo:longitude": "Angle",
  "dbo:coefficient": "Factor",
  "dbo:score": "Score",
  "dbo:rating": "Score",
  "dbo:rank": "Rank",
  "dbo:ranking": "Rank",
  "dbo:revenue": "Money",
  "dbo:income": "Money",
  "dbo:budget": "Money",
  "dbo:grossDomesticProduct": "Money",
  "dbo:salary": "Money",
  "dbo:cost": "Money",
  "dbo:fileSize": "DataSize",
  "dbo:runtime": "Duration",
  "dbo:age": "Duration",
  "dbo:frequency": "Frequency",
  "dbo:elevation": "Length",
  "dbo:height": "Length",
  "dbo:length": "Length",
  "dbo:width": "Length",
  "dbo:depth": "Length",
  "dbo:areaTotal": "Area",
  "dbo:area": "Area",
  "dbo:volume": "Volume",
  "dbo:capacity": "Volume",
  "dbo:weight": "Mass",
  "dbo:mass": "Mass",
  "dbo:power": "Power",
  "dbo:energy": "Energy",
  "dbo:pressure": "Pressure",
  "dbo:speed": "Speed",
  "dbo:averageSpeed": "Speed",
  "dbo:temperature": "Temperature",
  "dbo:meltingPoint": "Temperature",
  "dbo:boilingPoint": "Temperature",
  "wdt:P1082": "Count",
  "wdt:P2044": "Length",
  "wdt:P2046": "Area",
  "wdt:P2067": "Mass",
  "wdt:P2131": "Money",
  "wdt:P2047": "Duration"
}
)VOCAB";

}  // namespace anameta::builtin
