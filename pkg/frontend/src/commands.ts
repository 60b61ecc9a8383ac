// Command composition: turn an operator action into the uplink payload hex
// the target subsystem expects.

import { hexToBytes } from "./protocol.js";

export type Action =
    | { kind: "raw"; hex: string }
    | { kind: "setWheelSpeed"; rpm: number }
    | { kind: "requestTelemetry" }
    | { kind: "requestStsType"; type: number };

export const WDE_MAX_RPM = 10000;

export const STS_TYPE_LENGTHS: Record<number, number> = {
    0x00: 152,
    0x01: 16,
    0xa0: 11,
    0xa7: 3120,
    0xa8: 180,
    0x4d: 8,
    0x02: 32,
};

export function composePayload(action: Action): string {
    switch (action.kind) {
        case "raw": {
            hexToBytes(action.hex); // reject before anything is sent
            return action.hex.toLowerCase();
        }
        case "setWheelSpeed": {
            if (!Number.isInteger(action.rpm) || Math.abs(action.rpm) > WDE_MAX_RPM) {
                throw new Error(`wheel speed out of range: ${action.rpm}`);
            }
            const raw = action.rpm < 0 ? action.rpm + 0x10000 : action.rpm;
            const hi = (raw >> 8) & 0xff;
            const lo = raw & 0xff;
            return `02${hi.toString(16).padStart(2, "0")}${lo.toString(16).padStart(2, "0")}`;
        }
        case "requestTelemetry":
            return "01";
        case "requestStsType": {
            if (!(action.type in STS_TYPE_LENGTHS)) {
                throw new Error(`unknown star-sensor type 0x${action.type.toString(16)}`);
            }
            return action.type.toString(16).padStart(2, "0");
        }
    }
}
