/**
 * Ajv-backed validation against the schema file shared with the server.
 * Node-only (tests and the websocket bridge); the browser build uses the
 * structural validator from protocol.ts instead.
 */

import { readFileSync, existsSync } from "node:fs";
import { dirname, join, resolve } from "node:path";
import { fileURLToPath } from "node:url";
import { Ajv2020 } from "ajv/dist/2020.js";

import type { Validator } from "./protocol.js";

const SCHEMA_RELATIVE = join("src", "twsbr", "protocol.schema.json");

/** Walk up from this module until the repo root holding the shared schema. */
export function findSchemaPath(startDir?: string): string {
  let dir = startDir ?? dirname(fileURLToPath(import.meta.url));
  for (let i = 0; i < 6; i++) {
    const candidate = join(dir, SCHEMA_RELATIVE);
    if (existsSync(candidate)) return candidate;
    dir = resolve(dir, "..");
  }
  throw new Error(`cannot locate ${SCHEMA_RELATIVE} above ${startDir}`);
}

interface SchemaDoc {
  $defs: Record<string, object>;
}

export function loadSharedSchema(path?: string): SchemaDoc {
  return JSON.parse(readFileSync(path ?? findSchemaPath(), "utf-8")) as SchemaDoc;
}

function compile(defs: Record<string, object>, entry: string): Validator {
  const ajv = new Ajv2020({ allErrors: true, strict: false });
  const validate = ajv.compile({ $ref: `#/$defs/${entry}`, $defs: defs });
  return (msg: unknown) => {
    if (validate(msg)) return null;
    const errors = validate.errors ?? [];
    return errors
      .slice(0, 3)
      .map((e) => `${e.instancePath || "/"} ${e.message ?? "invalid"}`)
      .join("; ");
  };
}

export function makeClientValidator(schemaPath?: string): Validator {
  return compile(loadSharedSchema(schemaPath).$defs, "clientMessage");
}

export function makeServerValidator(schemaPath?: string): Validator {
  return compile(loadSharedSchema(schemaPath).$defs, "serverMessage");
}
