export {
  ArrayBatch,
  BatchSummary,
  PhiBatchResult,
  WeightOptions,
  WeightScheme,
  batchSummary,
  clipPhi,
  fuseBatch,
  idftWeightsBatch,
  lossBatch,
  phiBatch,
  weightOf,
} from "./arrays.js";
export { formatG9, sigDigitsClose } from "./format.js";
export {
  WeightRow,
  parseWeightJsonl,
  parseWeightLine,
  readJsonl,
  serializeWeightJsonl,
  serializeWeightRow,
} from "./jsonl.js";
