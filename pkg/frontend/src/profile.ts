/**
 * Device profile wire format shared by the probe page and the fixture
 * sites.
 *
 * The format is the detector's profile file: one JSON object keyed by
 * attribute id. Values are strings, except installed_plugins and
 * ip_addresses (arrays of strings) and geolocation (a [lat, lon] number
 * pair). null, '' and [] mark an attribute as explicitly absent rather
 * than measured. An optional captured_at field records when the probe
 * ran. Keys beyond the core set are kept by the loader, so the probe is
 * free to report extra attributes.
 */

export const CORE_ATTRIBUTE_IDS = [
    'resolution',
    'os',
    'os_version',
    'user_agent',
    'browser_name',
    'browser_version',
    'webgl_renderer',
    'webgl_vendor',
    'webgl_version',
    'gpu',
    'gpu_vendor',
    'installed_plugins',
    'language',
    'geolocation',
    'city',
    'ip_addresses',
    'charset',
] as const;

export type CoreAttributeId = (typeof CORE_ATTRIBUTE_IDS)[number];

export type GeoPair = [number, number];
export type ProfileValue = string | string[] | GeoPair;

export interface ProbeResult {
    values: Record<string, ProfileValue>;
    capturedAt: string;
    browserDescription: string;
}

export interface ValidatedProfile {
    values: Record<string, ProfileValue>;
    capturedAt: string | null;
    absentCoreIds: string[];
}

export class ProfileFormatError extends Error {}

const RESOLUTION_RE = /^\d+x\d+$/;

export const isGeoPair = (value: unknown): value is GeoPair =>
    Array.isArray(value) &&
    value.length === 2 &&
    value.every((c) => typeof c === 'number' && Number.isFinite(c));

/**
 * Render a profile value the way it travels inside an exfiltration
 * payload: strings as-is, lists comma-joined, geolocation as
 * "lat,lon". The fixture ground truth relies on this being the single
 * place that rule lives.
 */
export function valueText(value: ProfileValue): string {
    if (typeof value === 'string') {
        return value;
    }
    return value.join(',');
}

/**
 * Serialize a probe result into the profile file format. Core
 * attributes the probe could not measure are written as explicit
 * nulls so the file records "tried, absent" rather than omitting the
 * key.
 */
export function toProfileDocument(result: ProbeResult): Record<string, unknown> {
    const doc: Record<string, unknown> = { captured_at: result.capturedAt };
    for (const id of CORE_ATTRIBUTE_IDS) {
        doc[id] = id in result.values ? result.values[id] : null;
    }
    for (const [key, value] of Object.entries(result.values)) {
        if (!(key in doc)) {
            doc[key] = value;
        }
    }
    return doc;
}

function parseGeolocation(value: unknown): GeoPair {
    let parts: unknown[];
    if (typeof value === 'string') {
        parts = value.split(',').map((p) => Number(p.trim()));
    } else if (Array.isArray(value)) {
        parts = value.map((p) => (typeof p === 'string' ? Number(p) : p));
    } else {
        throw new ProfileFormatError(`geolocation must be a pair or a "lat, lon" string, got ${JSON.stringify(value)}`);
    }
    if (parts.length !== 2) {
        throw new ProfileFormatError(`geolocation must have exactly two coordinates, got ${JSON.stringify(value)}`);
    }
    const [lat, lon] = parts;
    if (typeof lat !== 'number' || typeof lon !== 'number' || !Number.isFinite(lat) || !Number.isFinite(lon)) {
        throw new ProfileFormatError(`geolocation coordinates must be numbers, got ${JSON.stringify(value)}`);
    }
    if (lat < -90 || lat > 90) {
        throw new ProfileFormatError(`geolocation latitude ${lat} out of range [-90, 90]`);
    }
    if (lon < -180 || lon > 180) {
        throw new ProfileFormatError(`geolocation longitude ${lon} out of range [-180, 180]`);
    }
    return [lat, lon];
}

/**
 * Validate a parsed profile document against the file format rules and
 * normalize its values. The harness /probe endpoint runs this on every
 * submission so a broken collector fails loudly instead of seeding the
 * detector with junk.
 */
export function validateProfileDocument(data: unknown): ValidatedProfile {
    if (typeof data !== 'object' || data === null || Array.isArray(data)) {
        throw new ProfileFormatError('profile document must be a JSON object');
    }
    const values: Record<string, ProfileValue> = {};
    let capturedAt: string | null = null;
    for (const [key, raw] of Object.entries(data)) {
        if (key === 'captured_at') {
            capturedAt = raw === null ? null : String(raw);
            continue;
        }
        if (raw === null || raw === '' || (Array.isArray(raw) && raw.length === 0)) {
            continue; // explicit absent marker
        }
        if (key === 'geolocation') {
            values[key] = parseGeolocation(raw);
        } else if (key === 'resolution') {
            if (typeof raw !== 'string' || !RESOLUTION_RE.test(raw)) {
                throw new ProfileFormatError(`resolution ${JSON.stringify(raw)} does not match <digits>x<digits>`);
            }
            values[key] = raw;
        } else if (Array.isArray(raw)) {
            values[key] = raw.map((v) => String(v));
        } else if (typeof raw === 'string' || typeof raw === 'number') {
            values[key] = String(raw);
        } else {
            throw new ProfileFormatError(`unsupported value type for ${JSON.stringify(key)}: ${JSON.stringify(raw)}`);
        }
    }
    const absentCoreIds = CORE_ATTRIBUTE_IDS.filter((id) => !(id in values));
    return { values, capturedAt, absentCoreIds };
}
